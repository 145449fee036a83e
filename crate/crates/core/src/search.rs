//! Exhaustive baseline: iterative deepening over leftmost derivations.
//!
//! For each depth limit the search expands the leftmost pending nonterminal
//! with every rule in id order. A branch is cut as soon as a placed terminal
//! disagrees with the input, or the shortest possible yield of what is still
//! pending no longer fits.

use std::time::{Duration, Instant};

use crate::ast::Ast;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, Nonterminal, RuleId, Symbol, Token};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchConfig {
    pub max_depth: usize,
    pub time_limit: Duration,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig { max_depth: 64, time_limit: Duration::from_secs(3600) }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SearchOutcome {
    Found(Ast),
    Timeout,
    Exhausted,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Depth limit of the last completed or interrupted iteration.
    pub depth_limit: usize,
    pub nodes: u64,
}

/// Shortest yield and smallest derivation depth of each nonterminal and rule.
#[derive(Clone, Debug)]
pub struct GrammarBounds {
    pub nt_min_len: Vec<usize>,
    pub nt_min_depth: Vec<usize>,
    pub rule_min_len: Vec<usize>,
    pub rule_min_depth: Vec<usize>,
}

impl GrammarBounds {
    pub fn of(g: &Grammar) -> GrammarBounds {
        let n = g.nonterminal_count();
        let mut nt_min_len = vec![usize::MAX; n];
        let mut nt_min_depth = vec![usize::MAX; n];
        let rule_len = |r: &crate::grammar::ProductionRule, lens: &[usize]| {
            r.rhs.iter().try_fold(0usize, |acc, s| match s {
                Symbol::T(_) => Some(acc + 1),
                Symbol::N(c) => (lens[c.index()] != usize::MAX).then(|| acc + lens[c.index()]),
            })
        };
        let rule_depth = |r: &crate::grammar::ProductionRule, depths: &[usize]| {
            r.children().try_fold(1usize, |acc, c| (depths[c.index()] != usize::MAX).then(|| acc.max(depths[c.index()] + 1)))
        };
        let mut changed = true;
        while changed {
            changed = false;
            for r in g.rules() {
                let lhs = r.lhs.index();
                if let Some(l) = rule_len(r, &nt_min_len) {
                    if l < nt_min_len[lhs] {
                        nt_min_len[lhs] = l;
                        changed = true;
                    }
                }
                if let Some(d) = rule_depth(r, &nt_min_depth) {
                    if d < nt_min_depth[lhs] {
                        nt_min_depth[lhs] = d;
                        changed = true;
                    }
                }
            }
        }
        let rule_min_len = g.rules().iter().map(|r| rule_len(r, &nt_min_len).unwrap_or(usize::MAX)).collect();
        let rule_min_depth = g.rules().iter().map(|r| rule_depth(r, &nt_min_depth).unwrap_or(usize::MAX)).collect();
        GrammarBounds { nt_min_len, nt_min_depth, rule_min_len, rule_min_depth }
    }
}

enum Flow {
    Found,
    Continue,
    Timeout,
}

struct Dfs<'a> {
    g: &'a Grammar,
    bounds: &'a GrammarBounds,
    input: &'a [Token],
    /// Pending symbols with their remaining depth budget; leftmost on top.
    stack: Vec<(Symbol, usize)>,
    pending_min: usize,
    rules: Vec<RuleId>,
    nodes: u64,
    started: Instant,
    limit: Duration,
}

impl Dfs<'_> {
    fn run(&mut self, pos: usize) -> Flow {
        self.nodes += 1;
        if self.nodes.is_multiple_of(1024) && self.started.elapsed() > self.limit {
            return Flow::Timeout;
        }
        if pos + self.pending_min > self.input.len() {
            return Flow::Continue;
        }
        let Some((sym, budget)) = self.stack.pop() else {
            return if pos == self.input.len() { Flow::Found } else { Flow::Continue };
        };
        let flow = match sym {
            Symbol::T(t) => {
                if self.input.get(pos) == Some(&t) {
                    self.pending_min -= 1;
                    let f = self.run(pos + 1);
                    self.pending_min += 1;
                    f
                } else {
                    Flow::Continue
                }
            }
            Symbol::N(nt) => self.expand(nt, budget, pos),
        };
        if !matches!(flow, Flow::Found) {
            self.stack.push((sym, budget));
        }
        flow
    }

    fn expand(&mut self, nt: Nonterminal, budget: usize, pos: usize) -> Flow {
        let own = self.bounds.nt_min_len[nt.index()];
        for &id in self.g.rule_ids_for(nt) {
            if self.bounds.rule_min_depth[id.index()] > budget {
                continue;
            }
            let rule = self.g.rule(id);
            let added = self.bounds.rule_min_len[id.index()];
            if pos + self.pending_min - own + added > self.input.len() {
                continue;
            }
            let height = self.stack.len();
            for s in rule.rhs.iter().rev() {
                self.stack.push((*s, budget - 1));
            }
            self.pending_min = self.pending_min - own + added;
            self.rules.push(id);
            let flow = self.run(pos);
            if matches!(flow, Flow::Found) {
                return flow;
            }
            self.rules.pop();
            self.pending_min = self.pending_min + own - added;
            self.stack.truncate(height);
            if matches!(flow, Flow::Timeout) {
                return flow;
            }
        }
        Flow::Continue
    }
}

/// Searches for a `Stmt` tree whose yield is exactly `input`, raising the
/// depth limit one level at a time.
pub fn iddfs_parse(g: &Grammar, input: &[Token], cfg: &SearchConfig) -> Result<(SearchOutcome, SearchStats)> {
    iddfs_parse_with(g, &GrammarBounds::of(g), input, g.start(), cfg)
}

pub fn iddfs_parse_with(
    g: &Grammar,
    bounds: &GrammarBounds,
    input: &[Token],
    nt: Nonterminal,
    cfg: &SearchConfig,
) -> Result<(SearchOutcome, SearchStats)> {
    g.check_nonterminal(nt)?;
    if input.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut stats = SearchStats::default();
    let started = Instant::now();
    for limit in 1..=cfg.max_depth {
        stats.depth_limit = limit;
        if bounds.nt_min_depth[nt.index()] > limit {
            continue;
        }
        let mut dfs = Dfs {
            g,
            bounds,
            input,
            stack: vec![(Symbol::N(nt), limit)],
            pending_min: bounds.nt_min_len[nt.index()],
            rules: Vec::new(),
            nodes: 0,
            started,
            limit: cfg.time_limit,
        };
        let flow = dfs.run(0);
        stats.nodes += dfs.nodes;
        match flow {
            Flow::Found => return Ok((SearchOutcome::Found(Ast::from_preorder(g, &dfs.rules)?), stats)),
            Flow::Timeout => return Ok((SearchOutcome::Timeout, stats)),
            Flow::Continue => {}
        }
        if started.elapsed() > cfg.time_limit {
            return Ok((SearchOutcome::Timeout, stats));
        }
    }
    Ok((SearchOutcome::Exhausted, stats))
}

/// Folds the outcome into the common error vocabulary.
pub fn search_tree(g: &Grammar, input: &[Token], cfg: &SearchConfig) -> Result<Ast> {
    match iddfs_parse(g, input, cfg)?.0 {
        SearchOutcome::Found(t) => Ok(t),
        SearchOutcome::Timeout => Err(Error::Timeout(cfg.time_limit.as_secs_f64())),
        SearchOutcome::Exhausted => Err(Error::Unparseable { furthest: 0, found: None }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{ast_equal, depth, TokenSeq};
    use crate::reference::reference_parse;

    fn toks(text: &str) -> Vec<Token> {
        TokenSeq::parse(Grammar::builtin(), text).unwrap().0
    }

    #[test]
    fn assignment_is_found_at_depth_six() {
        let g = Grammar::builtin();
        let input = toks("v0 = 1 ;");
        let (out, stats) = iddfs_parse(g, &input, &SearchConfig::default()).unwrap();
        let SearchOutcome::Found(t) = out else { panic!("{out:?}") };
        assert!(ast_equal(&t, &reference_parse(g, &input, g.start()).unwrap()));
        assert_eq!(stats.depth_limit, 6);
        assert_eq!(depth(&t), 6);
    }

    #[test]
    fn bounds_of_builtin_grammar() {
        let g = Grammar::builtin();
        let b = GrammarBounds::of(g);
        assert_eq!(b.nt_min_len[Nonterminal::STMT.index()], 4);
        assert_eq!(b.nt_min_depth[Nonterminal::STMT.index()], 6);
        assert_eq!(b.nt_min_len[Nonterminal::VAR.index()], 1);
        assert_eq!(b.nt_min_depth[Nonterminal::CONST.index()], 1);
    }

    #[test]
    fn nested_program() {
        let g = Grammar::builtin();
        let input = toks("if v0 < 2 then v1 = v0 * 3 ; else v1 = 0 ; endif ;");
        let t = search_tree(g, &input, &SearchConfig::default()).unwrap();
        assert!(ast_equal(&t, &reference_parse(g, &input, g.start()).unwrap()));
    }

    #[test]
    fn invalid_program_is_exhausted() {
        let g = Grammar::builtin();
        let cfg = SearchConfig { max_depth: 10, ..SearchConfig::default() };
        let (out, _) = iddfs_parse(g, &toks("v0 = ;"), &cfg).unwrap();
        assert_eq!(out, SearchOutcome::Exhausted);
        assert!(iddfs_parse(g, &[], &cfg).is_err());
    }

    #[test]
    fn tight_limit_times_out() {
        let g = Grammar::builtin();
        let long = "v0 = ( ( ( ( v1 + 1 ) * 2 ) - 3 ) + ( v2 * ( v3 - 4 ) ) ) ; ".repeat(3);
        let cfg = SearchConfig { max_depth: 64, time_limit: Duration::from_micros(1) };
        let (out, _) = iddfs_parse(g, &toks(&long), &cfg).unwrap();
        assert_eq!(out, SearchOutcome::Timeout);
        assert_eq!(search_tree(g, &toks(&long), &cfg).unwrap_err().kind(), "timeout");
    }
}
