//! Accuracy and latency over a grid of (depth, length) cells.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::ast::{ast_equal, Ast, TokenSeq};
use crate::engine::{Engine, InferConfig, Mode, OracleSelector};
use crate::error::{Error, Result};
use crate::grammar::Grammar;
use crate::guider::{Guider, GuiderModel, EVAL_SEED_BIT};
use crate::sampler::{SampleBucket, Sampler, MIN_PROGRAM_LENGTH};
use crate::search::{iddfs_parse_with, GrammarBounds, SearchConfig, SearchOutcome};

pub const CSV_HEADER: &str = "method,depth,length,count,exact_match,mean_time_s,p95_time_s,errors";
pub const DEFAULT_PER_CELL: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Ngsi(Mode),
    Search,
    Oracle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Ngsi(Mode::Fallback) => "ngsi",
            Method::Ngsi(Mode::Greedy) => "ngsi-greedy",
            Method::Ngsi(Mode::Beam) => "ngsi-beam",
            Method::Search => "search",
            Method::Oracle => "oracle",
        }
    }

    pub fn needs_model(&self) -> bool {
        matches!(self, Method::Ngsi(_))
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Method> {
        match s {
            "ngsi" => Ok(Method::Ngsi(Mode::Fallback)),
            "ngsi-greedy" => Ok(Method::Ngsi(Mode::Greedy)),
            "ngsi-beam" => Ok(Method::Ngsi(Mode::Beam)),
            "search" => Ok(Method::Search),
            "oracle" => Ok(Method::Oracle),
            other => Err(Error::InvalidArgument(format!(
                "unknown method `{other}` (expected ngsi, ngsi-greedy, ngsi-beam, search or oracle)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub method: String,
    pub depth: usize,
    pub length: usize,
    pub count: usize,
    pub matches: usize,
    /// Mean and 95th percentile wall time; `None` for empty cells or when
    /// timing is disabled.
    pub mean_time_s: Option<f64>,
    pub p95_time_s: Option<f64>,
    pub errors: BTreeMap<String, usize>,
}

impl EvalRecord {
    /// `None` for an infeasible (empty) cell.
    pub fn exact_match(&self) -> Option<f64> {
        (self.count > 0).then(|| self.matches as f64 / self.count as f64)
    }
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub methods: Vec<Method>,
    pub depths: RangeInclusive<usize>,
    pub lengths: Vec<usize>,
    pub per_cell: usize,
    pub seed: u64,
    pub infer: InferConfig,
    pub search: SearchConfig,
    pub jobs: usize,
    pub timing: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            methods: vec![Method::Ngsi(Mode::Fallback)],
            depths: 6..=11,
            lengths: (15..=30).collect(),
            per_cell: DEFAULT_PER_CELL,
            seed: 0,
            infer: InferConfig::default(),
            search: SearchConfig::default(),
            jobs: 1,
            timing: true,
        }
    }
}

/// Seed of an evaluation cell; always has [`EVAL_SEED_BIT`] set.
pub fn eval_seed(seed: u64, depth: usize, length: usize) -> u64 {
    let mut z = seed ^ ((depth as u64) << 32 | length as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) | EVAL_SEED_BIT
}

/// Programs of exactly `length` tokens and depth `depth`; empty if none exist.
pub fn cell_programs(g: &Grammar, depth: usize, length: usize, n: usize, seed: u64) -> Result<Vec<(TokenSeq, Ast)>> {
    if length < MIN_PROGRAM_LENGTH || depth == 0 {
        return Ok(Vec::new());
    }
    let bucket = SampleBucket::new((length, length), (depth, depth), eval_seed(seed, depth, length));
    match Sampler::new(g, bucket) {
        Ok(s) => Ok((0..n as u64).map(|i| s.sample_indexed(i)).collect()),
        Err(Error::UnsatisfiableBucket(_)) => Ok(Vec::new()),
        Err(e) => Err(e),
    }
}

enum Runner<'g> {
    Engine(Engine<'g, Guider>),
    Oracle(Engine<'g, OracleSelector>),
    Search(GrammarBounds, SearchConfig),
}

impl Runner<'_> {
    fn run(&self, g: &Grammar, tokens: &TokenSeq) -> Result<Ast> {
        match self {
            Runner::Engine(e) => e.infer(tokens.as_slice(), g.start()),
            Runner::Oracle(e) => e.infer(tokens.as_slice(), g.start()),
            Runner::Search(bounds, cfg) => match iddfs_parse_with(g, bounds, tokens.as_slice(), g.start(), cfg)?.0 {
                SearchOutcome::Found(t) => Ok(t),
                SearchOutcome::Timeout => Err(Error::Timeout(cfg.time_limit.as_secs_f64())),
                SearchOutcome::Exhausted => Err(Error::Unparseable { furthest: 0, found: None }),
            },
        }
    }
}

fn p95(sorted: &[f64]) -> f64 {
    let rank = ((0.95 * sorted.len() as f64).ceil() as usize).max(1);
    sorted[rank - 1]
}

/// Runs every method on `per_cell` fresh programs of each cell.
pub fn evaluate_grid(g: &Grammar, model: Option<&GuiderModel<f32>>, cfg: &EvalConfig) -> Result<Vec<EvalRecord>> {
    if cfg.per_cell == 0 {
        return Err(Error::InvalidArgument("per-cell count must be at least 1".into()));
    }
    let mut runners = Vec::new();
    for m in &cfg.methods {
        let runner = match m {
            Method::Ngsi(mode) => {
                let model =
                    model.ok_or_else(|| Error::InvalidArgument(format!("method {m} needs a model")))?;
                Runner::Engine(Engine::with_model(g, model, InferConfig { mode: *mode, ..cfg.infer })?)
            }
            Method::Oracle => Runner::Oracle(Engine::new(g, OracleSelector, cfg.infer)?),
            Method::Search => Runner::Search(GrammarBounds::of(g), cfg.search),
        };
        runners.push((*m, runner));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let mut records = Vec::new();
    for depth in cfg.depths.clone() {
        for &length in &cfg.lengths {
            let programs = cell_programs(g, depth, length, cfg.per_cell, cfg.seed)?;
            for (method, runner) in &runners {
                let run_one = |(tokens, truth): &(TokenSeq, Ast)| {
                    let t0 = Instant::now();
                    let result = runner.run(g, tokens);
                    let secs = t0.elapsed().as_secs_f64();
                    let outcome = match result {
                        Ok(t) if ast_equal(&t, truth) => Ok(()),
                        Ok(_) => Err("mismatch"),
                        Err(e) => Err(e.kind()),
                    };
                    (outcome, secs)
                };
                let outcomes: Vec<(std::result::Result<(), &str>, f64)> = if cfg.jobs > 1 {
                    pool.install(|| programs.par_iter().map(run_one).collect())
                } else {
                    programs.iter().map(run_one).collect()
                };
                let mut errors = BTreeMap::new();
                let mut matches = 0;
                for (o, _) in &outcomes {
                    match o {
                        Ok(()) => matches += 1,
                        Err(kind) => *errors.entry(kind.to_string()).or_insert(0) += 1,
                    }
                }
                let mut times: Vec<f64> = outcomes.iter().map(|(_, t)| *t).collect();
                times.sort_by(f64::total_cmp);
                let timed = cfg.timing && !times.is_empty();
                records.push(EvalRecord {
                    method: method.name().to_string(),
                    depth,
                    length,
                    count: programs.len(),
                    matches,
                    mean_time_s: timed.then(|| times.iter().sum::<f64>() / times.len() as f64),
                    p95_time_s: timed.then(|| p95(&times)),
                    errors,
                });
            }
        }
    }
    sort_records(&mut records);
    Ok(records)
}

pub fn sort_records(records: &mut [EvalRecord]) {
    records.sort_by(|a, b| (&a.method, a.depth, a.length).cmp(&(&b.method, b.depth, b.length)));
}

fn opt(v: Option<f64>, places: usize) -> String {
    v.map(|x| format!("{x:.places$}")).unwrap_or_default()
}

pub fn to_csv(records: &[EvalRecord]) -> String {
    let mut sorted = records.to_vec();
    sort_records(&mut sorted);
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in &sorted {
        let errors: Vec<String> = r.errors.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.method,
            r.depth,
            r.length,
            r.count,
            opt(r.exact_match(), 4),
            opt(r.mean_time_s, 6),
            opt(r.p95_time_s, 6),
            errors.join(";")
        ));
    }
    out
}

pub fn write_csv(records: &[EvalRecord], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(to_csv(records).as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Vec<EvalRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |msg: String| Error::Format { path: path.display().to_string(), line: i + 1, msg };
        if i == 0 {
            if line != CSV_HEADER {
                return Err(bad("unexpected header".into()));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("`{s}` is not an integer")));
        let float = |s: &str| -> Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse::<f64>().map(Some).map_err(|_| bad(format!("`{s}` is not a number")))
            }
        };
        let count = int(f[3])?;
        let matches = float(f[4])?.map(|r| (r * count as f64).round() as usize).unwrap_or(0);
        let mut errors = BTreeMap::new();
        for item in f[7].split(';').filter(|s| !s.is_empty()) {
            let (k, v) = item.split_once(':').ok_or_else(|| bad(format!("bad error entry `{item}`")))?;
            errors.insert(k.to_string(), int(v)?);
        }
        out.push(EvalRecord {
            method: f[0].to_string(),
            depth: int(f[1])?,
            length: int(f[2])?,
            count,
            matches,
            mean_time_s: float(f[5])?,
            p95_time_s: float(f[6])?,
            errors,
        });
    }
    Ok(out)
}

/// Mean exact-match rate over the nonempty records selected by `keep`.
pub fn mean_rate(records: &[EvalRecord], keep: impl Fn(&EvalRecord) -> bool) -> Option<f64> {
    let rates: Vec<f64> = records.iter().filter(|r| keep(r)).filter_map(EvalRecord::exact_match).collect();
    (!rates.is_empty()).then(|| rates.iter().sum::<f64>() / rates.len() as f64)
}
