//! Recursive guided inference: pick a rule for the span, split the span with
//! the decomposer, recurse into each nonterminal child.
//!
//! Three strategies share the same selector and decomposer:
//! greedy takes the top-ranked rule only, fallback retries the remaining
//! applicable rules in rank order, and beam keeps the best partial
//! derivations by summed log-probability.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use crate::ast::{self, Ast, TokenSeq};
use crate::decompose::Decomposer;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, Nonterminal, RuleId, Symbol, Token};
use crate::guider::{Guider, GuiderModel, PrefixStates};
use crate::reference::reference_parse;
use crate::sampler::read_corpus;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Greedy,
    Fallback,
    Beam,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Greedy => "greedy",
            Mode::Fallback => "fallback",
            Mode::Beam => "beam",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "greedy" => Ok(Mode::Greedy),
            "fallback" => Ok(Mode::Fallback),
            "beam" => Ok(Mode::Beam),
            other => Err(Error::InvalidArgument(format!("unknown mode `{other}` (expected greedy, fallback or beam)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InferConfig {
    pub mode: Mode,
    pub beam_width: usize,
    pub max_recursion_depth: usize,
    pub verify_reconstruction: bool,
}

impl Default for InferConfig {
    fn default() -> Self {
        InferConfig { mode: Mode::Fallback, beam_width: 4, max_recursion_depth: 64, verify_reconstruction: true }
    }
}

impl InferConfig {
    pub fn with_mode(mode: Mode) -> InferConfig {
        InferConfig { mode, ..InferConfig::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam_width == 0 {
            return Err(Error::InvalidArgument("beam width must be at least 1".into()));
        }
        if self.max_recursion_depth == 0 {
            return Err(Error::InvalidArgument("max recursion depth must be at least 1".into()));
        }
        Ok(())
    }
}

/// Source of rule distributions. One scorer is opened per input so that it
/// can cache work across the spans of that input.
pub trait RuleSelector: Sync {
    fn scorer<'a>(&'a self, g: &'a Grammar, tokens: &'a [Token]) -> Box<dyn SpanScorer + 'a>;
}

pub trait SpanScorer {
    /// Probabilities indexed by rule id; rules not expanding `nt` get zero.
    fn distribution(&mut self, span: Range<usize>, nt: Nonterminal) -> Vec<f64>;
}

struct GuiderScorer<'a> {
    guider: &'a Guider,
    tokens: &'a [Token],
    prefix: PrefixStates,
    memo: HashMap<(usize, usize, Nonterminal), Vec<f64>>,
}

impl SpanScorer for GuiderScorer<'_> {
    fn distribution(&mut self, span: Range<usize>, nt: Nonterminal) -> Vec<f64> {
        let key = (span.start, span.end, nt);
        if let Some(d) = self.memo.get(&key) {
            return d.clone();
        }
        let h = self.prefix.get(self.guider, self.tokens, span.start, span.end);
        let d = self.guider.distribution(h, nt);
        self.memo.insert(key, d.clone());
        d
    }
}

impl RuleSelector for Guider {
    fn scorer<'a>(&'a self, _g: &'a Grammar, tokens: &'a [Token]) -> Box<dyn SpanScorer + 'a> {
        Box::new(GuiderScorer { guider: self, tokens, prefix: PrefixStates::default(), memo: HashMap::new() })
    }
}

/// Point mass on the root rule of the reference parse of the span; uniform
/// over the applicable rules when the span has no parse.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleSelector;

struct OracleScorer<'a> {
    g: &'a Grammar,
    tokens: &'a [Token],
}

impl SpanScorer for OracleScorer<'_> {
    fn distribution(&mut self, span: Range<usize>, nt: Nonterminal) -> Vec<f64> {
        let mut d = vec![0.0; self.g.rule_count()];
        match reference_parse(self.g, &self.tokens[span], nt) {
            Ok(t) => d[t.rule.index()] = 1.0,
            Err(_) => {
                let ids = self.g.rule_ids_for(nt);
                for id in ids {
                    d[id.index()] = 1.0 / ids.len() as f64;
                }
            }
        }
        d
    }
}

impl RuleSelector for OracleSelector {
    fn scorer<'a>(&'a self, g: &'a Grammar, tokens: &'a [Token]) -> Box<dyn SpanScorer + 'a> {
        Box::new(OracleScorer { g, tokens })
    }
}

/// Node expansions allowed per input in beam mode before settling for the
/// best complete derivation found so far.
pub const BEAM_EXPANSION_BUDGET: usize = 20_000;

pub struct Engine<'g, S> {
    g: &'g Grammar,
    decomposer: Decomposer,
    selector: S,
    cfg: InferConfig,
}

impl<'g> Engine<'g, Guider> {
    pub fn with_model(g: &'g Grammar, model: &GuiderModel<f32>, cfg: InferConfig) -> Result<Engine<'g, Guider>> {
        Engine::new(g, Guider::new(g, model)?, cfg)
    }
}

impl<'g, S: RuleSelector> Engine<'g, S> {
    pub fn new(g: &'g Grammar, selector: S, cfg: InferConfig) -> Result<Engine<'g, S>> {
        cfg.validate()?;
        Ok(Engine { g, decomposer: Decomposer::new(g), selector, cfg })
    }

    pub fn config(&self) -> &InferConfig {
        &self.cfg
    }

    pub fn grammar(&self) -> &'g Grammar {
        self.g
    }

    pub fn selector(&self) -> &S {
        &self.selector
    }

    pub fn infer(&self, tokens: &[Token], nt: Nonterminal) -> Result<Ast> {
        self.g.check_nonterminal(nt)?;
        if tokens.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut run = Run::new(self, tokens);
        let all = 0..tokens.len();
        match self.cfg.mode {
            Mode::Greedy => {
                let t = run.greedy(all, nt, 1)?;
                if self.cfg.verify_reconstruction && !run.reconstructs(&t, 0..tokens.len()) {
                    return Err(Error::InconsistentParse);
                }
                Ok(t)
            }
            Mode::Fallback => run.fallback(all, nt, 1)?.ok_or_else(|| run.unparseable()),
            Mode::Beam => run.beam(nt),
        }
    }

    /// Summed log-probability the selector assigns to the rules of `tree`,
    /// each scored on the span it derives.
    pub fn log_prob(&self, tokens: &[Token], tree: &Ast) -> Result<f64> {
        tree.validate(self.g)?;
        let mut yield_ = Vec::new();
        ast::emit(self.g, tree, &mut yield_);
        if yield_ != tokens {
            return Err(Error::InconsistentParse);
        }
        let mut scorer = self.selector.scorer(self.g, tokens);
        fn walk(g: &Grammar, scorer: &mut dyn SpanScorer, t: &Ast, start: usize) -> (f64, usize) {
            let rule = g.rule(t.rule);
            let mut pos = start;
            let mut children = t.children.iter();
            let mut total = 0.0;
            for sym in &rule.rhs {
                match sym {
                    Symbol::T(_) => pos += 1,
                    Symbol::N(_) => {
                        let (lp, end) = walk(g, scorer, children.next().expect("validated"), pos);
                        total += lp;
                        pos = end;
                    }
                }
            }
            let d = scorer.distribution(start..pos, rule.lhs);
            (total + d[t.rule.index()].ln(), pos)
        }
        Ok(walk(self.g, scorer.as_mut(), tree, 0).0)
    }
}

/// Convenience wrapper for a single input.
pub fn infer(g: &Grammar, d: &TokenSeq, nt: Nonterminal, model: &GuiderModel<f32>, cfg: InferConfig) -> Result<Ast> {
    Engine::with_model(g, model, cfg)?.infer(d.as_slice(), nt)
}

struct BeamState {
    score: f64,
    rules: Vec<RuleId>,
    /// Pending (span, nonterminal, level); the leftmost sits on top.
    frontier: Vec<(Range<usize>, Nonterminal, usize)>,
}

struct Run<'e, 'g, S> {
    engine: &'e Engine<'g, S>,
    tokens: &'e [Token],
    scorer: Box<dyn SpanScorer + 'e>,
    memo: HashMap<(usize, usize, Nonterminal), Option<Ast>>,
    furthest: usize,
}

impl<'e, 'g, S: RuleSelector> Run<'e, 'g, S> {
    fn new(engine: &'e Engine<'g, S>, tokens: &'e [Token]) -> Self {
        Run { engine, tokens, scorer: engine.selector.scorer(engine.g, tokens), memo: HashMap::new(), furthest: 0 }
    }

    fn unparseable(&self) -> Error {
        let pos = self.furthest.min(self.tokens.len());
        Error::Unparseable { furthest: pos, found: self.tokens.get(pos).map(|t| self.engine.g.token_text(*t).to_string()) }
    }

    fn check_level(&self, level: usize) -> Result<()> {
        if level > self.engine.cfg.max_recursion_depth {
            return Err(Error::DepthLimit(self.engine.cfg.max_recursion_depth));
        }
        Ok(())
    }

    fn reconstructs(&self, t: &Ast, span: Range<usize>) -> bool {
        let mut out = Vec::with_capacity(span.len());
        ast::emit(self.engine.g, t, &mut out);
        out == self.tokens[span]
    }

    fn split(&self, span: &Range<usize>, id: RuleId) -> Option<Vec<Range<usize>>> {
        let rule = self.engine.g.rule(id);
        let parts = self.engine.decomposer.split(&self.tokens[span.clone()], rule).ok()?;
        Some(parts.into_iter().map(|r| r.start + span.start..r.end + span.start).collect())
    }

    fn ranked(&mut self, span: &Range<usize>, nt: Nonterminal) -> (Vec<RuleId>, Vec<f64>) {
        let dist = self.scorer.distribution(span.clone(), nt);
        let mut ids = self.engine.g.rule_ids_for(nt).to_vec();
        // stable: equal probabilities keep rule-id order
        ids.sort_by(|a, b| dist[b.index()].total_cmp(&dist[a.index()]));
        (ids, dist)
    }

    fn greedy(&mut self, span: Range<usize>, nt: Nonterminal, level: usize) -> Result<Ast> {
        self.check_level(level)?;
        let (ids, _) = self.ranked(&span, nt);
        let id = ids[0];
        let Some(parts) = self.split(&span, id) else {
            self.furthest = self.furthest.max(span.start);
            return Err(self.unparseable());
        };
        let children: Vec<Nonterminal> = self.engine.g.rule(id).children().collect();
        let mut subtrees = Vec::with_capacity(children.len());
        for (c, r) in children.into_iter().zip(parts) {
            subtrees.push(self.greedy(r, c, level + 1)?);
        }
        Ok(Ast::node(id, subtrees))
    }

    fn fallback(&mut self, span: Range<usize>, nt: Nonterminal, level: usize) -> Result<Option<Ast>> {
        self.check_level(level)?;
        let key = (span.start, span.end, nt);
        if let Some(done) = self.memo.get(&key) {
            return Ok(done.clone());
        }
        let (ids, _) = self.ranked(&span, nt);
        'rules: for id in ids {
            let Some(parts) = self.split(&span, id) else { continue };
            let children: Vec<Nonterminal> = self.engine.g.rule(id).children().collect();
            let mut subtrees = Vec::with_capacity(children.len());
            for (c, r) in children.into_iter().zip(parts) {
                match self.fallback(r, c, level + 1)? {
                    Some(t) => subtrees.push(t),
                    None => continue 'rules,
                }
            }
            let t = Ast::node(id, subtrees);
            if self.engine.cfg.verify_reconstruction && !self.reconstructs(&t, span.clone()) {
                continue;
            }
            self.memo.insert(key, Some(t.clone()));
            return Ok(Some(t));
        }
        self.furthest = self.furthest.max(span.start);
        self.memo.insert(key, None);
        Ok(None)
    }

    fn beam(&mut self, nt: Nonterminal) -> Result<Ast> {
        let g = self.engine.g;
        let width = self.engine.cfg.beam_width;
        let all = 0..self.tokens.len();

        // the greedy derivation is the first incumbent
        let mut best: Option<(f64, Ast)> = match self.greedy(all.clone(), nt, 1) {
            Ok(t) if self.reconstructs(&t, all.clone()) => {
                let score = self.tree_score(&t, 0);
                Some((score, t))
            }
            Ok(_) | Err(Error::Unparseable { .. }) => None,
            Err(e) => return Err(e),
        };

        let mut beam = vec![BeamState { score: 0.0, rules: Vec::new(), frontier: vec![(all.clone(), nt, 1)] }];
        let mut reserve: Vec<BeamState> = Vec::new();
        let mut expansions = 0usize;
        let beats = |score: f64, best: &Option<(f64, Ast)>| best.as_ref().is_none_or(|(b, _)| score > *b);
        while expansions < BEAM_EXPANSION_BUDGET {
            let mut next = Vec::new();
            for mut s in beam.drain(..) {
                let (span, nt, level) = s.frontier.pop().expect("incomplete state");
                self.check_level(level)?;
                expansions += 1;
                let (ids, dist) = self.ranked(&span, nt);
                for id in ids {
                    let p = dist[id.index()];
                    if p <= 0.0 {
                        continue;
                    }
                    let score = s.score + p.ln();
                    if !beats(score, &best) {
                        continue;
                    }
                    let Some(parts) = self.split(&span, id) else {
                        self.furthest = self.furthest.max(span.start);
                        continue;
                    };
                    let mut rules = s.rules.clone();
                    rules.push(id);
                    let mut frontier = s.frontier.clone();
                    let children: Vec<Nonterminal> = g.rule(id).children().collect();
                    for (c, r) in children.into_iter().zip(parts).rev() {
                        frontier.push((r, c, level + 1));
                    }
                    if frontier.is_empty() {
                        let t = Ast::from_preorder(g, &rules)?;
                        if !self.engine.cfg.verify_reconstruction || self.reconstructs(&t, all.clone()) {
                            best = Some((score, t));
                        }
                    } else {
                        next.push(BeamState { score, rules, frontier });
                    }
                }
                s.frontier.clear();
            }
            next.retain(|s| beats(s.score, &best));
            next.sort_by(|a, b| b.score.total_cmp(&a.score));
            if next.len() > width {
                reserve.extend(next.drain(width..));
            }
            beam = next;
            if beam.is_empty() {
                reserve.retain(|s| beats(s.score, &best));
                if reserve.is_empty() {
                    break;
                }
                reserve.sort_by(|a, b| b.score.total_cmp(&a.score));
                let take = width.min(reserve.len());
                beam = reserve.drain(..take).collect();
            }
        }
        best.map(|(_, t)| t).ok_or_else(|| self.unparseable())
    }

    fn tree_score(&mut self, t: &Ast, start: usize) -> f64 {
        let g = self.engine.g;
        let rule = g.rule(t.rule);
        let mut pos = start;
        let mut children = t.children.iter();
        let mut total = 0.0;
        for sym in &rule.rhs {
            match sym {
                Symbol::T(_) => pos += 1,
                Symbol::N(_) => {
                    let c = children.next().expect("validated");
                    total += self.tree_score(c, pos);
                    let mut y = Vec::new();
                    ast::emit(g, c, &mut y);
                    pos += y.len();
                }
            }
        }
        let mut y = Vec::new();
        ast::emit(g, t, &mut y);
        total + self.scorer.distribution(start..start + y.len(), rule.lhs)[t.rule.index()].ln()
    }
}

#[derive(Debug)]
pub struct InferRow {
    /// 1-based line in the corpus file.
    pub line: usize,
    pub text: String,
    pub result: Result<Ast>,
    /// Wall time spent inside inference only.
    pub seconds: f64,
}

/// Runs the engine on every program of a corpus file; a bad line yields an
/// error row and processing continues.
pub fn infer_file<S: RuleSelector>(engine: &Engine<'_, S>, path: &Path) -> Result<Vec<InferRow>> {
    let g = engine.grammar();
    let lines = read_corpus(g, path)?;
    Ok(lines
        .into_iter()
        .enumerate()
        .map(|(i, line)| match line.tokens {
            Ok(tokens) => {
                let t0 = Instant::now();
                let result = engine.infer(tokens.as_slice(), g.start());
                InferRow { line: i + 1, text: line.text, result, seconds: t0.elapsed().as_secs_f64() }
            }
            Err(e) => InferRow { line: i + 1, text: line.text, result: Err(e), seconds: 0.0 },
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::ast_equal;
    use crate::sampler::{SampleBucket, Sampler};

    fn toks(text: &str) -> Vec<Token> {
        TokenSeq::parse(Grammar::builtin(), text).unwrap().0
    }

    #[test]
    fn oracle_matches_reference_in_every_mode() {
        let g = Grammar::builtin();
        let sampler = Sampler::new(g, SampleBucket::new((4, 30), (1, 12), 5)).unwrap();
        for mode in [Mode::Greedy, Mode::Fallback, Mode::Beam] {
            let engine = Engine::new(g, OracleSelector, InferConfig::with_mode(mode)).unwrap();
            for i in 0..150 {
                let (tokens, tree) = sampler.sample_indexed(i);
                let got = engine.infer(tokens.as_slice(), g.start()).unwrap();
                assert!(ast_equal(&got, &tree), "{mode}: {}", tokens.to_text(g));
            }
        }
    }

    #[test]
    fn single_var_under_fallback() {
        let g = Grammar::builtin();
        let m = GuiderModel::<f32>::init(g, 4, 6, 3);
        let t = infer(g, &TokenSeq(toks("v0")), Nonterminal::VAR, &m, InferConfig::default()).unwrap();
        assert_eq!(g.rule(t.rule).name, "V1");
        assert!(t.children.is_empty());
    }

    #[test]
    fn empty_input_is_an_error() {
        let g = Grammar::builtin();
        let engine = Engine::new(g, OracleSelector, InferConfig::default()).unwrap();
        assert!(matches!(engine.infer(&[], g.start()), Err(Error::EmptyInput)));
    }

    #[test]
    fn unparseable_input() {
        let g = Grammar::builtin();
        for mode in [Mode::Greedy, Mode::Fallback, Mode::Beam] {
            let engine = Engine::new(g, OracleSelector, InferConfig::with_mode(mode)).unwrap();
            let err = engine.infer(&toks("v0 = = 1 ;"), g.start()).unwrap_err();
            assert_eq!(err.kind(), "unparseable", "{mode}");
        }
    }

    #[test]
    fn depth_cap_is_enforced() {
        let g = Grammar::builtin();
        let cfg = InferConfig { max_recursion_depth: 3, ..InferConfig::default() };
        let engine = Engine::new(g, OracleSelector, cfg).unwrap();
        assert!(matches!(engine.infer(&toks("v0 = 1 ;"), g.start()), Err(Error::DepthLimit(3))));
    }

    #[test]
    fn untrained_model_recovers_by_fallback() {
        let g = Grammar::builtin();
        let m = GuiderModel::<f32>::init(g, 4, 6, 11);
        let engine = Engine::with_model(g, &m, InferConfig::default()).unwrap();
        let input = toks("v1 = ( v0 + 2 ) * 3 ; v2 = v1 ;");
        let t = engine.infer(&input, g.start()).unwrap();
        assert!(ast_equal(&t, &reference_parse(g, &input, g.start()).unwrap()));
    }

    #[test]
    fn oracle_log_prob_is_zero() {
        let g = Grammar::builtin();
        let engine = Engine::new(g, OracleSelector, InferConfig::default()).unwrap();
        let input = toks("while v0 < 3 do v0 = v0 + 1 ; endwhile ;");
        let t = engine.infer(&input, g.start()).unwrap();
        assert_eq!(engine.log_prob(&input, &t).unwrap(), 0.0);
    }

    #[test]
    fn zero_beam_width_is_rejected() {
        let g = Grammar::builtin();
        let cfg = InferConfig { beam_width: 0, ..InferConfig::default() };
        assert!(Engine::new(g, OracleSelector, cfg).is_err());
        assert_eq!("beam".parse::<Mode>().unwrap(), Mode::Beam);
        assert!("wide".parse::<Mode>().is_err());
    }
}
