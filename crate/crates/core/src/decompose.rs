//! Hand-coded inverse of a rule application.
//!
//! Given a token span and a rule, split the span into one component per rhs
//! nonterminal. A terminal that directly follows another terminal (or starts
//! the rule) must sit at the cursor; a terminal that follows a nonterminal is
//! located as its first occurrence at nesting depth zero, where depth counts
//! `(`/`)`, `if`/`endif` and `while`/`endwhile`.

use std::fmt;
use std::ops::Range;

use crate::grammar::{Brackets, Grammar, ProductionRule, Symbol, Token};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecompositionFailure {
    pub rule: String,
    pub reason: &'static str,
}

impl fmt::Display for DecompositionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "cannot decompose with {}: {}", self.rule, self.reason)
    }
}

impl std::error::Error for DecompositionFailure {}

/// Reusable splitter bound to a grammar.
#[derive(Clone, Debug)]
pub struct Decomposer {
    brackets: Brackets,
}

impl Decomposer {
    pub fn new(g: &Grammar) -> Decomposer {
        Decomposer { brackets: Brackets::of(g) }
    }

    /// Splits `tokens` into component ranges (relative to `tokens`).
    pub fn split(&self, tokens: &[Token], rule: &ProductionRule) -> Result<Vec<Range<usize>>, DecompositionFailure> {
        let fail = |reason| DecompositionFailure { rule: rule.name.clone(), reason };
        if tokens.is_empty() {
            return Err(fail("empty input"));
        }
        let mut parts = Vec::with_capacity(rule.arity());
        let mut cursor = 0;
        // start of a component whose end is not yet known
        let mut pending: Option<usize> = None;
        for sym in &rule.rhs {
            match *sym {
                Symbol::N(_) => {
                    if pending.is_some() {
                        // two adjacent nonterminals cannot be split by a scan
                        return Err(fail("adjacent nonterminals"));
                    }
                    pending = Some(cursor);
                }
                Symbol::T(term) => match pending.take() {
                    None => {
                        if tokens.get(cursor) != Some(&term) {
                            return Err(fail("terminal mismatch"));
                        }
                        cursor += 1;
                    }
                    Some(start) => {
                        let at = self.find_top_level(tokens, start, term).ok_or_else(|| fail("terminal not found at top level"))?;
                        parts.push(start..at);
                        cursor = at + 1;
                    }
                },
            }
        }
        match pending {
            Some(start) => {
                if start >= tokens.len() {
                    return Err(fail("empty component"));
                }
                if !self.balanced(&tokens[start..]) {
                    return Err(fail("unbalanced component"));
                }
                parts.push(start..tokens.len());
            }
            None if cursor != tokens.len() => return Err(fail("leftover tokens")),
            None => {}
        }
        Ok(parts)
    }

    /// First index `> start` holding `term` at depth zero relative to `start`.
    /// The component `[start, index)` must be nonempty and balanced.
    fn find_top_level(&self, tokens: &[Token], start: usize, term: Token) -> Option<usize> {
        let mut depth = 0i32;
        for (i, tok) in tokens.iter().enumerate().skip(start) {
            if i > start && depth == 0 && *tok == term {
                return Some(i);
            }
            depth += self.brackets.delta(*tok);
            if depth < 0 {
                return None;
            }
        }
        None
    }

    fn balanced(&self, tokens: &[Token]) -> bool {
        let mut depth = 0i32;
        for tok in tokens {
            depth += self.brackets.delta(*tok);
            if depth < 0 {
                return false;
            }
        }
        depth == 0
    }
}

/// One component per rhs nonterminal of `rule`.
pub fn decompose(g: &Grammar, tokens: &[Token], rule: &ProductionRule) -> Result<Vec<Vec<Token>>, DecompositionFailure> {
    let parts = Decomposer::new(g).split(tokens, rule)?;
    Ok(parts.into_iter().map(|r| tokens[r].to_vec()).collect())
}

/// Interleaves components with the rule's terminals.
pub fn reassemble(rule: &ProductionRule, parts: &[Vec<Token>]) -> Vec<Token> {
    let mut out = Vec::new();
    let mut it = parts.iter();
    for sym in &rule.rhs {
        match sym {
            Symbol::T(t) => out.push(*t),
            Symbol::N(_) => out.extend_from_slice(it.next().expect("one part per nonterminal")),
        }
    }
    out
}
