//! Rule-application trees and token sequences.
//!
//! A node stores only its rule id; terminals are implied by the rule, so the
//! pre-order text form `(S2 (A1 (V1) (E3 (T2 (F3 (C2))))))` is canonical.

use std::fmt;

use crate::error::{Error, Result};
use crate::grammar::{Grammar, Nonterminal, RuleId, Symbol, Token};

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokenSeq(pub Vec<Token>);

impl TokenSeq {
    /// Splits on whitespace and maps every word through the vocabulary.
    pub fn parse(g: &Grammar, text: &str) -> Result<TokenSeq> {
        text.split_whitespace().map(|w| g.token(w)).collect::<Result<Vec<_>>>().map(TokenSeq)
    }

    pub fn to_text(&self, g: &Grammar) -> String {
        join_tokens(g, &self.0)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Token] {
        &self.0
    }
}

pub fn join_tokens(g: &Grammar, tokens: &[Token]) -> String {
    let words: Vec<&str> = tokens.iter().map(|t| g.token_text(*t)).collect();
    words.join(" ")
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Ast {
    pub rule: RuleId,
    pub children: Vec<Ast>,
}

impl Ast {
    pub fn leaf(rule: RuleId) -> Ast {
        Ast { rule, children: Vec::new() }
    }

    pub fn node(rule: RuleId, children: Vec<Ast>) -> Ast {
        Ast { rule, children }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(Ast::node_count).sum::<usize>()
    }

    /// Checks child counts and child lhs against the rule table, recursively.
    pub fn validate(&self, g: &Grammar) -> Result<()> {
        let rule = g.rule_by_id(self.rule.index())?;
        let expected: Vec<Nonterminal> = rule.children().collect();
        if expected.len() != self.children.len() {
            return Err(Error::MalformedAst(format!(
                "{} expects {} children, found {}",
                rule.name,
                expected.len(),
                self.children.len()
            )));
        }
        for (child, nt) in self.children.iter().zip(expected) {
            let child_rule = g.rule_by_id(child.rule.index())?;
            if child_rule.lhs != nt {
                return Err(Error::MalformedAst(format!(
                    "{} expects a {} child, found {} ({})",
                    rule.name,
                    g.nonterminal_name(nt),
                    child_rule.name,
                    g.nonterminal_name(child_rule.lhs)
                )));
            }
            child.validate(g)?;
        }
        Ok(())
    }

    pub fn root_lhs(&self, g: &Grammar) -> Nonterminal {
        g.rule(self.rule).lhs
    }

    /// Pre-order list of rule ids.
    pub fn preorder(&self) -> Vec<RuleId> {
        let mut out = Vec::with_capacity(self.node_count());
        fn walk(t: &Ast, out: &mut Vec<RuleId>) {
            out.push(t.rule);
            for c in &t.children {
                walk(c, out);
            }
        }
        walk(self, &mut out);
        out
    }

    /// Rebuilds a tree from its pre-order rule list.
    pub fn from_preorder(g: &Grammar, rules: &[RuleId]) -> Result<Ast> {
        fn build(g: &Grammar, rules: &[RuleId], pos: &mut usize) -> Result<Ast> {
            let id = *rules.get(*pos).ok_or_else(|| Error::MalformedAst("truncated pre-order list".into()))?;
            *pos += 1;
            let arity = g.rule_by_id(id.index())?.arity();
            let children = (0..arity).map(|_| build(g, rules, pos)).collect::<Result<Vec<_>>>()?;
            Ok(Ast::node(id, children))
        }
        let mut pos = 0;
        let t = build(g, rules, &mut pos)?;
        if pos != rules.len() {
            return Err(Error::MalformedAst("trailing rules in pre-order list".into()));
        }
        t.validate(g)?;
        Ok(t)
    }
}

/// Terminal yield of the derivation.
pub fn pretty_print(g: &Grammar, t: &Ast) -> Result<TokenSeq> {
    t.validate(g)?;
    let mut out = Vec::new();
    emit(g, t, &mut out);
    Ok(TokenSeq(out))
}

/// Appends the yield of an already-validated tree.
pub(crate) fn emit(g: &Grammar, t: &Ast, out: &mut Vec<Token>) {
    let mut children = t.children.iter();
    for sym in &g.rule(t.rule).rhs {
        match sym {
            Symbol::T(tok) => out.push(*tok),
            Symbol::N(_) => emit(g, children.next().expect("validated tree"), out),
        }
    }
}

/// Node count of the longest root-to-leaf path.
pub fn depth(t: &Ast) -> usize {
    1 + t.children.iter().map(depth).max().unwrap_or(0)
}

pub fn ast_equal(a: &Ast, b: &Ast) -> bool {
    a.rule == b.rule && a.children.len() == b.children.len() && a.children.iter().zip(&b.children).all(|(x, y)| ast_equal(x, y))
}

pub fn serialize(g: &Grammar, t: &Ast) -> String {
    let mut out = String::new();
    fn write(g: &Grammar, t: &Ast, out: &mut String) {
        out.push('(');
        out.push_str(&g.rule(t.rule).name);
        for c in &t.children {
            out.push(' ');
            write(g, c, out);
        }
        out.push(')');
    }
    write(g, t, &mut out);
    out
}

pub fn deserialize(g: &Grammar, text: &str) -> Result<Ast> {
    let mut p = SexpParser { src: text.as_bytes(), pos: 0 };
    let t = p.node(g)?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input"));
    }
    t.validate(g)?;
    Ok(t)
}

struct SexpParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl SexpParser<'_> {
    fn err(&self, msg: &str) -> Error {
        Error::AstSyntax { pos: self.pos, msg: msg.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn node(&mut self, g: &Grammar) -> Result<Ast> {
        self.skip_ws();
        if self.src.get(self.pos) != Some(&b'(') {
            return Err(self.err("expected `(`"));
        }
        self.pos += 1;
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err("expected rule name"));
        }
        let name = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let rule = g.rule_by_name(name)?.id;
        let mut children = Vec::new();
        loop {
            self.skip_ws();
            match self.src.get(self.pos) {
                Some(b')') => {
                    self.pos += 1;
                    return Ok(Ast::node(rule, children));
                }
                Some(b'(') => children.push(self.node(g)?),
                _ => return Err(self.err("expected `(` or `)`")),
            }
        }
    }
}

/// Displays a tree in the text format against the built-in grammar.
pub struct AstDisplay<'a>(pub &'a Grammar, pub &'a Ast);

impl fmt::Display for AstDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serialize(self.0, self.1))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn r(name: &str) -> RuleId {
        Grammar::builtin().rule_by_name(name).unwrap().id
    }

    /// S2(A1(V1, E3(T2(F3(C2))))), the tree for "v0 = 1 ;".
    pub fn assign_tree() -> Ast {
        Ast::node(
            r("S2"),
            vec![Ast::node(
                r("A1"),
                vec![
                    Ast::leaf(r("V1")),
                    Ast::node(r("E3"), vec![Ast::node(r("T2"), vec![Ast::node(r("F3"), vec![Ast::leaf(r("C2"))])])]),
                ],
            )],
        )
    }

    #[test]
    fn prints_assignment() {
        let g = Grammar::builtin();
        assert_eq!(pretty_print(g, &assign_tree()).unwrap().to_text(g), "v0 = 1 ;");
        assert_eq!(pretty_print(g, &Ast::leaf(r("V1"))).unwrap().to_text(g), "v0");
    }

    #[test]
    fn print_rejects_wrong_child_lhs() {
        let g = Grammar::builtin();
        let bad = Ast::node(r("S2"), vec![Ast::leaf(r("V1"))]);
        assert!(matches!(pretty_print(g, &bad), Err(Error::MalformedAst(_))));
        let missing = Ast::node(r("S1"), vec![Ast::leaf(r("V1"))]);
        assert!(pretty_print(g, &missing).is_err());
    }

    #[test]
    fn depth_counts_nodes_on_longest_path() {
        assert_eq!(depth(&Ast::leaf(r("V1"))), 1);
        assert_eq!(depth(&assign_tree()), 6);
        let s1 = Ast::node(r("S1"), vec![assign_tree().children[0].clone(), assign_tree()]);
        assert_eq!(depth(&s1), 1 + depth(&assign_tree()).max(depth(&assign_tree().children[0])));
    }

    #[test]
    fn equality() {
        let t = assign_tree();
        assert!(ast_equal(&t, &t));
        let s1_rooted = Ast::node(r("S1"), vec![t.children[0].clone(), t.clone()]);
        assert!(!ast_equal(&t, &s1_rooted));
        let mut other = t.clone();
        other.children[0].children[1].children[0].children[0].children[0].rule = r("C1");
        assert!(!ast_equal(&t, &other));
    }

    #[test]
    fn text_format() {
        let g = Grammar::builtin();
        let text = serialize(g, &assign_tree());
        assert_eq!(text, "(S2 (A1 (V1) (E3 (T2 (F3 (C2))))))");
        assert!(ast_equal(&deserialize(g, &text).unwrap(), &assign_tree()));
        assert_eq!(deserialize(g, "(V1)").unwrap(), Ast::leaf(r("V1")));
        assert!(matches!(deserialize(g, "(S2 (V1))"), Err(Error::MalformedAst(_))));
        assert!(matches!(deserialize(g, "(S2 (A1"), Err(Error::AstSyntax { .. })));
        assert!(matches!(deserialize(g, "(V1) x"), Err(Error::AstSyntax { .. })));
        assert!(matches!(deserialize(g, "(Q7)"), Err(Error::UnknownRule(_))));
    }

    #[test]
    fn preorder_round_trip() {
        let g = Grammar::builtin();
        let t = assign_tree();
        assert_eq!(Ast::from_preorder(g, &t.preorder()).unwrap(), t);
    }
}
