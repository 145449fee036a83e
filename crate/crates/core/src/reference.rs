//! Deterministic recursive-descent parser for the built-in grammar.
//!
//! This is the ground truth the guided engine and the search baseline are
//! checked against. It shares nothing with [`crate::decompose`]: it predicts
//! with one token of lookahead and only backtracks on the `(` ambiguity
//! between `B4` and a parenthesised arithmetic operand of `B1`/`B2`.

use crate::ast::Ast;
use crate::error::{Error, Result};
use crate::grammar::{Grammar, Nonterminal, RuleId, Token};

/// Parses `tokens` as a `nt`, requiring the whole input to be consumed.
pub fn reference_parse(g: &Grammar, tokens: &[Token], nt: Nonterminal) -> Result<Ast> {
    g.check_nonterminal(nt)?;
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut p = Parser::new(g, tokens);
    match p.parse(nt) {
        Some(t) if p.pos == tokens.len() => Ok(t),
        _ => {
            let furthest = p.furthest.max(p.pos).min(tokens.len());
            Err(Error::Unparseable { furthest, found: tokens.get(furthest).map(|t| g.token_text(*t).to_string()) })
        }
    }
}

struct Kw {
    semi: Token,
    assign: Token,
    if_: Token,
    then: Token,
    else_: Token,
    endif: Token,
    while_: Token,
    do_: Token,
    endwhile: Token,
    plus: Token,
    minus: Token,
    times: Token,
    lparen: Token,
    rparen: Token,
    lt: Token,
    eq: Token,
    not: Token,
    and: Token,
}

struct Parser<'a> {
    g: &'a Grammar,
    toks: &'a [Token],
    pos: usize,
    furthest: usize,
    kw: Kw,
    vars: Vec<(Token, RuleId)>,
    digits: Vec<(Token, RuleId)>,
}

impl<'a> Parser<'a> {
    fn new(g: &'a Grammar, toks: &'a [Token]) -> Self {
        let t = |s: &str| g.token(s).expect("built-in terminal");
        let leaf_rules = |nt: Nonterminal| {
            g.rule_ids_for(nt)
                .iter()
                .map(|id| match g.rule(*id).rhs[0] {
                    crate::grammar::Symbol::T(tok) => (tok, *id),
                    crate::grammar::Symbol::N(_) => unreachable!("leaf rule"),
                })
                .collect::<Vec<_>>()
        };
        Parser {
            g,
            toks,
            pos: 0,
            furthest: 0,
            kw: Kw {
                semi: t(";"),
                assign: t("="),
                if_: t("if"),
                then: t("then"),
                else_: t("else"),
                endif: t("endif"),
                while_: t("while"),
                do_: t("do"),
                endwhile: t("endwhile"),
                plus: t("+"),
                minus: t("-"),
                times: t("*"),
                lparen: t("("),
                rparen: t(")"),
                lt: t("<"),
                eq: t("=="),
                not: t("not"),
                and: t("and"),
            },
            vars: leaf_rules(Nonterminal::VAR),
            digits: leaf_rules(Nonterminal::CONST),
        }
    }

    fn rule(&self, name: &str) -> RuleId {
        self.g.rule_by_name(name).expect("built-in rule").id
    }

    fn peek(&self) -> Option<Token> {
        self.toks.get(self.pos).copied()
    }

    fn eat(&mut self, tok: Token) -> Option<()> {
        if self.peek() == Some(tok) {
            self.pos += 1;
            self.furthest = self.furthest.max(self.pos);
            Some(())
        } else {
            self.furthest = self.furthest.max(self.pos);
            None
        }
    }

    fn is_var(&self, tok: Option<Token>) -> bool {
        tok.is_some_and(|t| self.vars.iter().any(|(v, _)| *v == t))
    }

    fn parse(&mut self, nt: Nonterminal) -> Option<Ast> {
        match nt {
            Nonterminal::STMT => self.stmt(),
            Nonterminal::SIMP_STMT => self.simp_stmt(),
            Nonterminal::AEXPR => self.aexpr(),
            Nonterminal::ATERM => self.aterm(),
            Nonterminal::AFACTOR => self.afactor(),
            Nonterminal::BEXPR => self.bexpr(),
            Nonterminal::VAR => self.leaf(true),
            Nonterminal::CONST => self.leaf(false),
            _ => None,
        }
    }

    fn leaf(&mut self, var: bool) -> Option<Ast> {
        let tok = self.peek();
        let table = if var { &self.vars } else { &self.digits };
        let id = table.iter().find(|(t, _)| Some(*t) == tok).map(|(_, id)| *id);
        match id {
            Some(id) => {
                self.pos += 1;
                self.furthest = self.furthest.max(self.pos);
                Some(Ast::leaf(id))
            }
            None => {
                self.furthest = self.furthest.max(self.pos);
                None
            }
        }
    }

    fn stmt(&mut self) -> Option<Ast> {
        let first = self.simp_stmt()?;
        self.eat(self.kw.semi)?;
        let next = self.peek();
        if self.is_var(next) || next == Some(self.kw.if_) || next == Some(self.kw.while_) {
            let rest = self.stmt()?;
            Some(Ast::node(self.rule("S1"), vec![first, rest]))
        } else {
            Some(Ast::node(self.rule("S2"), vec![first]))
        }
    }

    fn simp_stmt(&mut self) -> Option<Ast> {
        let next = self.peek();
        if next == Some(self.kw.if_) {
            self.pos += 1;
            let cond = self.bexpr()?;
            self.eat(self.kw.then)?;
            let yes = self.stmt()?;
            self.eat(self.kw.else_)?;
            let no = self.stmt()?;
            self.eat(self.kw.endif)?;
            Some(Ast::node(self.rule("I1"), vec![cond, yes, no]))
        } else if next == Some(self.kw.while_) {
            self.pos += 1;
            let cond = self.bexpr()?;
            self.eat(self.kw.do_)?;
            let body = self.stmt()?;
            self.eat(self.kw.endwhile)?;
            Some(Ast::node(self.rule("W1"), vec![cond, body]))
        } else {
            let var = self.leaf(true)?;
            self.eat(self.kw.assign)?;
            let rhs = self.aexpr()?;
            Some(Ast::node(self.rule("A1"), vec![var, rhs]))
        }
    }

    fn aexpr(&mut self) -> Option<Ast> {
        let term = self.aterm()?;
        let next = self.peek();
        if next == Some(self.kw.plus) || next == Some(self.kw.minus) {
            self.pos += 1;
            let rest = self.aexpr()?;
            let name = if next == Some(self.kw.plus) { "E1" } else { "E2" };
            Some(Ast::node(self.rule(name), vec![term, rest]))
        } else {
            Some(Ast::node(self.rule("E3"), vec![term]))
        }
    }

    fn aterm(&mut self) -> Option<Ast> {
        let factor = self.afactor()?;
        if self.peek() == Some(self.kw.times) {
            self.pos += 1;
            let rest = self.aterm()?;
            Some(Ast::node(self.rule("T1"), vec![factor, rest]))
        } else {
            Some(Ast::node(self.rule("T2"), vec![factor]))
        }
    }

    fn afactor(&mut self) -> Option<Ast> {
        let next = self.peek();
        if next == Some(self.kw.lparen) {
            self.pos += 1;
            let inner = self.aexpr()?;
            self.eat(self.kw.rparen)?;
            Some(Ast::node(self.rule("F1"), vec![inner]))
        } else if self.is_var(next) {
            let v = self.leaf(true)?;
            Some(Ast::node(self.rule("F2"), vec![v]))
        } else {
            let c = self.leaf(false)?;
            Some(Ast::node(self.rule("F3"), vec![c]))
        }
    }

    fn bexpr(&mut self) -> Option<Ast> {
        let next = self.peek();
        if next == Some(self.kw.not) {
            self.pos += 1;
            let inner = self.bexpr()?;
            return Some(Ast::node(self.rule("B3"), vec![inner]));
        }
        if next == Some(self.kw.lparen) {
            let save = self.pos;
            if let Some(t) = self.conjunction() {
                return Some(t);
            }
            self.pos = save;
        }
        let lhs = self.aexpr()?;
        let op = self.peek();
        let name = if op == Some(self.kw.lt) {
            "B1"
        } else if op == Some(self.kw.eq) {
            "B2"
        } else {
            self.furthest = self.furthest.max(self.pos);
            return None;
        };
        self.pos += 1;
        let rhs = self.aexpr()?;
        Some(Ast::node(self.rule(name), vec![lhs, rhs]))
    }

    fn conjunction(&mut self) -> Option<Ast> {
        self.eat(self.kw.lparen)?;
        let a = self.bexpr()?;
        self.eat(self.kw.and)?;
        let b = self.bexpr()?;
        self.eat(self.kw.rparen)?;
        Some(Ast::node(self.rule("B4"), vec![a, b]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ast::{pretty_print, serialize, tests::assign_tree, TokenSeq};

    fn parse(text: &str, nt: Nonterminal) -> Result<Ast> {
        let g = Grammar::builtin();
        reference_parse(g, TokenSeq::parse(g, text).unwrap().as_slice(), nt)
    }

    #[test]
    fn assignment() {
        assert_eq!(parse("v0 = 1 ;", Nonterminal::STMT).unwrap(), assign_tree());
    }

    #[test]
    fn single_var() {
        let g = Grammar::builtin();
        assert_eq!(serialize(g, &parse("v0", Nonterminal::VAR).unwrap()), "(V1)");
    }

    #[test]
    fn missing_expression_is_unparseable() {
        match parse("v0 = ;", Nonterminal::STMT) {
            Err(Error::Unparseable { furthest, found }) => {
                assert_eq!(furthest, 2);
                assert_eq!(found.as_deref(), Some(";"));
            }
            other => panic!("expected unparseable, got {other:?}"),
        }
        assert!(matches!(parse("v0 = 1 ; v1", Nonterminal::STMT), Err(Error::Unparseable { .. })));
        assert!(matches!(parse("", Nonterminal::STMT), Err(Error::EmptyInput)));
    }

    #[test]
    fn conditions_and_blocks() {
        let g = Grammar::builtin();
        let cases = [
            (
                "if v0 < 1 then v1 = 2 ; else v1 = 3 ; endif ;",
                "(S2 (I1 (B1 (E3 (T2 (F2 (V1)))) (E3 (T2 (F3 (C2))))) (S2 (A1 (V2) (E3 (T2 (F3 (C3)))))) (S2 (A1 (V2) (E3 (T2 (F3 (C4))))))))",
            ),
            (
                "while ( v0 < 1 and not ( v1 ) == 2 ) do v0 = v0 + 1 ; endwhile ;",
                "(S2 (W1 (B4 (B1 (E3 (T2 (F2 (V1)))) (E3 (T2 (F3 (C2))))) (B3 (B2 (E3 (T2 (F1 (E3 (T2 (F2 (V2))))))) (E3 (T2 (F3 (C3))))))) (S2 (A1 (V1) (E1 (T2 (F2 (V1))) (E3 (T2 (F3 (C2)))))))))",
            ),
            ("( v0 + 1 ) < 2", "(B1 (E3 (T2 (F1 (E1 (T2 (F2 (V1))) (E3 (T2 (F3 (C2)))))))) (E3 (T2 (F3 (C3)))))"),
            ("1 * 2 - 3", "(E2 (T1 (F3 (C2)) (T2 (F3 (C3)))) (E3 (T2 (F3 (C4)))))"),
        ];
        for (src, expected) in cases {
            let nt = if src.ends_with(';') {
                Nonterminal::STMT
            } else if src.contains('<') {
                Nonterminal::BEXPR
            } else {
                Nonterminal::AEXPR
            };
            let t = parse(src, nt).unwrap();
            assert_eq!(serialize(g, &t), expected, "{src}");
            assert_eq!(pretty_print(g, &t).unwrap().to_text(g), src);
        }
    }
}
