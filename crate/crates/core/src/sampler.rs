//! Random programs under length/depth constraints, training-pair extraction
//! and the curriculum schedule.
//!
//! Programs are drawn by exact counting: for every nonterminal, yield length
//! and exact depth we count the derivations, then sample top-down with
//! weights proportional to those counts. A draw first picks a feasible
//! `(length, depth)` pair of the bucket uniformly, then a tree uniformly among
//! all trees with that length and depth. Counts are kept as `f64`; they stay
//! far below the exponent range for the sizes used here and the sampler only
//! needs their ratios.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::ast::{self, depth, Ast, TokenSeq};
use crate::error::{Error, Result};
use crate::grammar::{Grammar, Nonterminal, RuleId};

/// Length of the shortest derivable program, `v0 = 0 ;`.
pub const MIN_PROGRAM_LENGTH: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SampleBucket {
    pub min_length: usize,
    pub max_length: usize,
    pub min_depth: usize,
    pub max_depth: usize,
    pub seed: u64,
}

impl SampleBucket {
    pub fn new(length: (usize, usize), depth: (usize, usize), seed: u64) -> SampleBucket {
        SampleBucket { min_length: length.0, max_length: length.1, min_depth: depth.0, max_depth: depth.1, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_length > self.max_length || self.min_depth > self.max_depth {
            return Err(Error::InvalidBucket(format!("{self}: min exceeds max")));
        }
        if self.min_length < MIN_PROGRAM_LENGTH {
            return Err(Error::InvalidBucket(format!("{self}: lengths start at {MIN_PROGRAM_LENGTH}")));
        }
        if self.min_depth < 1 {
            return Err(Error::InvalidBucket(format!("{self}: depths start at 1")));
        }
        Ok(())
    }

    /// `min_len:max_len:min_depth:max_depth`, as accepted by `gen --bucket`.
    pub fn parse(spec: &str, seed: u64) -> Result<SampleBucket> {
        let nums: Vec<usize> = spec
            .split(':')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::InvalidArgument(format!("bad bucket `{spec}`")))?;
        match nums.as_slice() {
            [a, b, c, d] => {
                let bucket = SampleBucket::new((*a, *b), (*c, *d), seed);
                bucket.validate()?;
                Ok(bucket)
            }
            _ => Err(Error::InvalidArgument(format!("bucket `{spec}` needs four fields"))),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> SampleBucket {
        self.seed = seed;
        self
    }

    /// Generator for draw `index`: stream `index` of the bucket seed.
    pub fn rng(&self, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index);
        rng
    }
}

impl fmt::Display for SampleBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "length [{},{}] depth [{},{}]", self.min_length, self.max_length, self.min_depth, self.max_depth)
    }
}

/// Derivation counts by (nonterminal, yield length, exact depth).
#[derive(Clone, Debug)]
pub struct DerivationCounts {
    max_len: usize,
    max_depth: usize,
    /// exact[nt][len][depth]
    exact: Vec<Vec<Vec<f64>>>,
    /// at_most[nt][len][depth] = sum of exact over depths 1..=depth
    at_most: Vec<Vec<Vec<f64>>>,
    /// per rule and child depth bound: suffix tables for splitting lengths among children
    suffix: Vec<Vec<SuffixTables>>,
}

#[derive(Clone, Debug, Default)]
struct SuffixTables {
    /// at_most[i][len]: ways for children i.. to yield `len` with every depth <= bound
    at_most: Vec<Vec<f64>>,
    /// reaching[i][len]: same, with the maximum depth exactly the bound
    reaching: Vec<Vec<f64>>,
}

impl DerivationCounts {
    pub fn new(g: &Grammar, max_len: usize, max_depth: usize) -> DerivationCounts {
        let n = g.nonterminal_count();
        let mut c = DerivationCounts {
            max_len,
            max_depth,
            exact: vec![vec![vec![0.0; max_depth + 1]; max_len + 1]; n],
            at_most: vec![vec![vec![0.0; max_depth + 1]; max_len + 1]; n],
            suffix: vec![vec![SuffixTables::default(); max_depth + 1]; g.rule_count()],
        };
        for d in 1..=max_depth {
            for rule in g.rules() {
                let t = rule.terminal_count();
                if rule.arity() == 0 {
                    if d == 1 && t <= max_len {
                        c.exact[rule.lhs.index()][t][1] += 1.0;
                    }
                    continue;
                }
                if d == 1 {
                    continue;
                }
                let tables = c.suffix_tables(rule.children().collect::<Vec<_>>().as_slice(), d - 1);
                for len in t..=max_len {
                    c.exact[rule.lhs.index()][len][d] += tables.reaching[0][len - t];
                }
                c.suffix[rule.id.index()][d - 1] = tables;
            }
            for nt in 0..n {
                for len in 0..=max_len {
                    c.at_most[nt][len][d] = c.at_most[nt][len][d - 1] + c.exact[nt][len][d];
                }
            }
        }
        c
    }

    fn suffix_tables(&self, children: &[Nonterminal], bound: usize) -> SuffixTables {
        let k = children.len();
        let l = self.max_len;
        let mut at_most = vec![vec![0.0; l + 1]; k + 1];
        let mut reaching = vec![vec![0.0; l + 1]; k + 1];
        at_most[k][0] = 1.0;
        for i in (0..k).rev() {
            let c = children[i].index();
            for total in 1..=l {
                let (mut le, mut mx) = (0.0, 0.0);
                for len in 1..=total {
                    let rest = total - len;
                    le += self.at_most[c][len][bound] * at_most[i + 1][rest];
                    mx += self.exact[c][len][bound] * at_most[i + 1][rest]
                        + self.at_most[c][len][bound - 1] * reaching[i + 1][rest];
                }
                at_most[i][total] = le;
                reaching[i][total] = mx;
            }
        }
        SuffixTables { at_most, reaching }
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn max_depth(&self) -> usize {
        self.max_depth
    }

    /// Number of trees rooted at `nt` with yield length `len` and depth exactly `depth`.
    pub fn count(&self, nt: Nonterminal, len: usize, depth: usize) -> f64 {
        if len > self.max_len || depth > self.max_depth || depth == 0 {
            return 0.0;
        }
        self.exact[nt.index()][len][depth]
    }

    /// Feasible `(length, depth)` pairs of `bucket` for programs rooted at the start symbol.
    pub fn feasible_cells(&self, g: &Grammar, bucket: &SampleBucket) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for len in bucket.min_length..=bucket.max_length.min(self.max_len) {
            for d in bucket.min_depth..=bucket.max_depth.min(self.max_depth) {
                if self.count(g.start(), len, d) > 0.0 {
                    cells.push((len, d));
                }
            }
        }
        cells
    }

    /// Draws a tree uniformly among those rooted at `nt` with the given yield length and exact depth.
    pub fn sample_tree<R: Rng + ?Sized>(&self, g: &Grammar, nt: Nonterminal, len: usize, depth: usize, rng: &mut R) -> Option<Ast> {
        if self.count(nt, len, depth) <= 0.0 {
            return None;
        }
        let rules = g.rule_ids_for(nt);
        let weights: Vec<f64> = rules
            .iter()
            .map(|id| {
                let rule = g.rule(*id);
                let t = rule.terminal_count();
                if rule.arity() == 0 {
                    if depth == 1 && t == len { 1.0 } else { 0.0 }
                } else if depth >= 2 && len >= t {
                    self.suffix[id.index()][depth - 1].reaching[0][len - t]
                } else {
                    0.0
                }
            })
            .collect();
        let rule = g.rule(rules[pick(&weights, rng)]);
        if rule.arity() == 0 {
            return Some(Ast::leaf(rule.id));
        }
        let children: Vec<Nonterminal> = rule.children().collect();
        let tables = &self.suffix[rule.id.index()][depth - 1];
        let bound = depth - 1;
        let mut remaining = len - rule.terminal_count();
        let mut need_bound = true;
        let mut out = Vec::with_capacity(children.len());
        for (i, child) in children.iter().enumerate() {
            let c = child.index();
            // (child length, child depth is exactly the bound?)
            let mut options: Vec<(usize, bool)> = Vec::new();
            let mut weights: Vec<f64> = Vec::new();
            for l in 1..=remaining {
                let rest = remaining - l;
                if need_bound {
                    options.push((l, true));
                    weights.push(self.exact[c][l][bound] * tables.at_most[i + 1][rest]);
                    options.push((l, false));
                    weights.push(self.at_most[c][l][bound - 1] * tables.reaching[i + 1][rest]);
                } else {
                    options.push((l, false));
                    weights.push(self.at_most[c][l][bound] * tables.at_most[i + 1][rest]);
                }
            }
            let (l, at_bound) = options[pick(&weights, rng)];
            let child_depth = if at_bound {
                bound
            } else {
                let cap = if need_bound { bound - 1 } else { bound };
                let dw: Vec<f64> = (1..=cap).map(|e| self.exact[c][l][e]).collect();
                1 + pick(&dw, rng)
            };
            if at_bound {
                need_bound = false;
            }
            out.push(self.sample_tree(g, *child, l, child_depth, rng)?);
            remaining -= l;
        }
        Some(Ast::node(rule.id, out))
    }
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    debug_assert!(total > 0.0, "no positive weight to sample from");
    let mut x = rng.random::<f64>() * total;
    let mut last = 0;
    for (i, w) in weights.iter().enumerate() {
        if *w > 0.0 {
            if x < *w {
                return i;
            }
            x -= w;
            last = i;
        }
    }
    last
}

/// Program generator for one bucket.
#[derive(Clone, Debug)]
pub struct Sampler<'g> {
    g: &'g Grammar,
    bucket: SampleBucket,
    counts: DerivationCounts,
    cells: Vec<(usize, usize)>,
}

impl<'g> Sampler<'g> {
    pub fn new(g: &'g Grammar, bucket: SampleBucket) -> Result<Sampler<'g>> {
        bucket.validate()?;
        let counts = DerivationCounts::new(g, bucket.max_length, bucket.max_depth);
        let cells = counts.feasible_cells(g, &bucket);
        if cells.is_empty() {
            return Err(Error::UnsatisfiableBucket(bucket.to_string()));
        }
        Ok(Sampler { g, bucket, counts, cells })
    }

    pub fn bucket(&self) -> &SampleBucket {
        &self.bucket
    }

    pub fn cells(&self) -> &[(usize, usize)] {
        &self.cells
    }

    pub fn counts(&self) -> &DerivationCounts {
        &self.counts
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (TokenSeq, Ast) {
        let (len, d) = self.cells[rng.random_range(0..self.cells.len())];
        let tree = self
            .counts
            .sample_tree(self.g, self.g.start(), len, d, rng)
            .expect("feasible cell has a positive count");
        let mut tokens = Vec::with_capacity(len);
        ast::emit(self.g, &tree, &mut tokens);
        (TokenSeq(tokens), tree)
    }

    /// Draw `index` of the bucket's seeded sequence.
    pub fn sample_indexed(&self, index: u64) -> (TokenSeq, Ast) {
        self.sample(&mut self.bucket.rng(index))
    }

    /// `n` draws, index 0..n; identical for any number of worker threads.
    pub fn corpus(&self, n: usize, jobs: usize) -> Vec<(TokenSeq, Ast)> {
        if jobs <= 1 {
            (0..n as u64).map(|i| self.sample_indexed(i)).collect()
        } else {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().expect("thread pool");
            pool.install(|| (0..n as u64).into_par_iter().map(|i| self.sample_indexed(i)).collect())
        }
    }
}

/// One program drawn from `bucket` using `rng`.
pub fn sample_program<R: Rng + ?Sized>(g: &Grammar, bucket: &SampleBucket, rng: &mut R) -> Result<(TokenSeq, Ast)> {
    Ok(Sampler::new(g, *bucket)?.sample(rng))
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TrainingPair {
    pub input: TokenSeq,
    pub nt: Nonterminal,
    pub label: RuleId,
}

/// One pair per node, in pre-order: the node's yield, its lhs and its rule.
pub fn extract_training_pairs(g: &Grammar, t: &Ast) -> Vec<TrainingPair> {
    let mut out = Vec::with_capacity(t.node_count());
    fn walk(g: &Grammar, t: &Ast, out: &mut Vec<TrainingPair>) -> Vec<crate::grammar::Token> {
        let idx = out.len();
        out.push(TrainingPair { input: TokenSeq::default(), nt: g.rule(t.rule).lhs, label: t.rule });
        let mut children = t.children.iter();
        let mut tokens = Vec::new();
        for sym in &g.rule(t.rule).rhs {
            match sym {
                crate::grammar::Symbol::T(tok) => tokens.push(*tok),
                crate::grammar::Symbol::N(_) => tokens.extend(walk(g, children.next().expect("valid tree"), out)),
            }
        }
        out[idx].input = TokenSeq(tokens.clone());
        tokens
    }
    walk(g, t, &mut out);
    out
}

pub const CURRICULUM_MIN_LENGTH: usize = 5;
pub const CURRICULUM_MAX_LENGTH: usize = 15;
pub const CURRICULUM_MAX_DEPTH: usize = 9;
/// Every program has depth >= 6 and the first stage needs length >= 5, which takes depth 7.
pub const CURRICULUM_FIRST_MAX_DEPTH: usize = 7;
pub const CURRICULUM_REPEATS: usize = 3;

/// `stages` buckets of growing size, the whole sequence repeated three times.
///
/// `max_length` goes linearly from 7 to 15 and `max_depth` from 7 to 9 (rounded);
/// a single stage is the full `[5,15] x [1,9]` bucket. Seeds are zero; the
/// trainer assigns its own.
pub fn curriculum_schedule(stages: usize) -> Vec<SampleBucket> {
    assert!(stages >= 1, "curriculum needs at least one stage");
    let lerp = |from: f64, to: f64, s: usize| -> usize {
        if stages == 1 {
            to as usize
        } else {
            (from + (to - from) * s as f64 / (stages - 1) as f64).round() as usize
        }
    };
    let cycle: Vec<SampleBucket> = (0..stages)
        .map(|s| {
            SampleBucket::new(
                (CURRICULUM_MIN_LENGTH, lerp(7.0, CURRICULUM_MAX_LENGTH as f64, s)),
                (1, lerp(CURRICULUM_FIRST_MAX_DEPTH as f64, CURRICULUM_MAX_DEPTH as f64, s)),
                0,
            )
        })
        .collect();
    (0..CURRICULUM_REPEATS).flat_map(|_| cycle.iter().copied()).collect()
}

/// `<tokens>\t<AST text>` per line.
pub fn write_corpus(g: &Grammar, path: &Path, programs: &[(TokenSeq, Ast)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for (tokens, tree) in programs {
        writeln!(w, "{}\t{}", tokens.to_text(g), ast::serialize(g, tree))?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a corpus file; every line is kept as raw text plus its parsed form,
/// so one bad line does not abort the rest.
pub fn read_corpus(g: &Grammar, path: &Path) -> Result<Vec<CorpusLine>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (tokens_text, tree_text) = match line.split_once('\t') {
            Some((a, b)) => (a.to_string(), Some(b.to_string())),
            None => (line.clone(), None),
        };
        let tokens = TokenSeq::parse(g, &tokens_text);
        let tree = tree_text.map(|t| ast::deserialize(g, &t));
        out.push(CorpusLine { text: tokens_text, tokens, tree });
    }
    Ok(out)
}

#[derive(Debug)]
pub struct CorpusLine {
    pub text: String,
    pub tokens: Result<TokenSeq>,
    pub tree: Option<Result<Ast>>,
}

/// `<tokens>\t<nonterminal name>\t<rule id>` per line.
pub fn write_dataset(g: &Grammar, path: &Path, pairs: &[TrainingPair]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        writeln!(w, "{}\t{}\t{}", p.input.to_text(g), g.nonterminal_name(p.nt), p.label.0)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(g: &Grammar, path: &Path) -> Result<Vec<TrainingPair>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let bad = |msg: &str| Error::Format { path: path.display().to_string(), line: i + 1, msg: msg.to_string() };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad("expected three tab-separated fields"));
        }
        let input = TokenSeq::parse(g, fields[0])?;
        let nt = g.nonterminal_by_name(fields[1])?;
        let id: usize = fields[2].parse().map_err(|_| bad("rule id is not an integer"))?;
        let label = g.rule_by_id(id)?.id;
        out.push(TrainingPair { input, nt, label });
    }
    Ok(out)
}

/// Length and depth of a generated program, for bucket checks.
pub fn measure(tokens: &TokenSeq, tree: &Ast) -> (usize, usize) {
    (tokens.len(), depth(tree))
}
