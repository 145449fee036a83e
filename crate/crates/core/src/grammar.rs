//! The WHILE-style grammar: nonterminals, terminal vocabulary and the rule table.
//!
//! The built-in grammar is right-recursive and delimits every block with an
//! explicit terminator, so each rule can be undone by a single left-to-right
//! scan with nesting counters (see [`crate::decompose`]).

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Nonterminal(pub u8);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Token(pub u16);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RuleId(pub u16);

impl Nonterminal {
    pub const STMT: Nonterminal = Nonterminal(0);
    pub const SIMP_STMT: Nonterminal = Nonterminal(1);
    pub const AEXPR: Nonterminal = Nonterminal(2);
    pub const ATERM: Nonterminal = Nonterminal(3);
    pub const AFACTOR: Nonterminal = Nonterminal(4);
    pub const BEXPR: Nonterminal = Nonterminal(5);
    pub const VAR: Nonterminal = Nonterminal(6);
    pub const CONST: Nonterminal = Nonterminal(7);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl Token {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl RuleId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Symbol {
    T(Token),
    N(Nonterminal),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProductionRule {
    pub id: RuleId,
    /// Short label such as `S1` or `C10`; used by the AST text format.
    pub name: String,
    pub lhs: Nonterminal,
    pub rhs: Vec<Symbol>,
}

impl ProductionRule {
    pub fn children(&self) -> impl Iterator<Item = Nonterminal> + '_ {
        self.rhs.iter().filter_map(|s| match s {
            Symbol::N(n) => Some(*n),
            Symbol::T(_) => None,
        })
    }

    pub fn arity(&self) -> usize {
        self.children().count()
    }

    pub fn terminal_count(&self) -> usize {
        self.rhs.len() - self.arity()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Defect {
    Unreachable(String),
    Nonproductive(String),
    Duplicate { lhs: String, rules: (String, String) },
    UndefinedSymbol { rule: String },
    EmptyRhs { rule: String },
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::Unreachable(nt) => write!(f, "unreachable: {nt}"),
            Defect::Nonproductive(nt) => write!(f, "nonproductive: {nt}"),
            Defect::Duplicate { lhs, rules } => {
                write!(f, "duplicate: {} and {} under {lhs}", rules.0, rules.1)
            }
            Defect::UndefinedSymbol { rule } => write!(f, "undefined symbol in {rule}"),
            Defect::EmptyRhs { rule } => write!(f, "empty rhs in {rule}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Grammar {
    nonterminals: Vec<String>,
    vocab: Vec<String>,
    rules: Vec<ProductionRule>,
    start: Nonterminal,
    by_lhs: Vec<Vec<RuleId>>,
    token_index: HashMap<String, Token>,
    rule_index: HashMap<String, RuleId>,
}

impl Grammar {
    /// Builds a grammar from a rule list written as `(name, lhs, rhs)` where rhs
    /// items naming a nonterminal are nonterminals and everything else is a terminal.
    /// Terminals are numbered in order of first appearance.
    ///
    /// No validation beyond name resolution happens here; see [`validate_grammar`].
    pub fn from_rules(nonterminals: &[&str], start: &str, rules: &[(&str, &str, &[&str])]) -> Result<Grammar> {
        let nt_ids: HashMap<&str, Nonterminal> = nonterminals
            .iter()
            .enumerate()
            .map(|(i, n)| (*n, Nonterminal(i as u8)))
            .collect();
        let lookup_nt = |name: &str| nt_ids.get(name).copied().ok_or_else(|| Error::UnknownNonterminalName(name.to_string()));

        let mut vocab: Vec<String> = Vec::new();
        let mut token_index = HashMap::new();
        let mut table = Vec::with_capacity(rules.len());
        for (i, (name, lhs, rhs)) in rules.iter().enumerate() {
            let lhs = lookup_nt(lhs)?;
            let rhs = rhs
                .iter()
                .map(|sym| match nt_ids.get(sym) {
                    Some(nt) => Symbol::N(*nt),
                    None => {
                        let tok = *token_index.entry(sym.to_string()).or_insert_with(|| {
                            vocab.push(sym.to_string());
                            Token(vocab.len() as u16 - 1)
                        });
                        Symbol::T(tok)
                    }
                })
                .collect();
            table.push(ProductionRule { id: RuleId(i as u16), name: name.to_string(), lhs, rhs });
        }

        let mut by_lhs = vec![Vec::new(); nonterminals.len()];
        for r in &table {
            by_lhs[r.lhs.index()].push(r.id);
        }
        let rule_index = table.iter().map(|r| (r.name.clone(), r.id)).collect();
        Ok(Grammar {
            nonterminals: nonterminals.iter().map(|s| s.to_string()).collect(),
            vocab,
            rules: table,
            start: lookup_nt(start)?,
            by_lhs,
            token_index,
            rule_index,
        })
    }

    /// The shipped 32-rule grammar.
    pub fn builtin() -> &'static Grammar {
        static GRAMMAR: OnceLock<Grammar> = OnceLock::new();
        GRAMMAR.get_or_init(|| {
            let mut rules: Vec<(&str, &str, &[&str])> = vec![
                ("S1", "Stmt", &["SimpStmt", ";", "Stmt"]),
                ("S2", "Stmt", &["SimpStmt", ";"]),
                ("A1", "SimpStmt", &["Var", "=", "AExpr"]),
                ("I1", "SimpStmt", &["if", "BExpr", "then", "Stmt", "else", "Stmt", "endif"]),
                ("W1", "SimpStmt", &["while", "BExpr", "do", "Stmt", "endwhile"]),
                ("E1", "AExpr", &["ATerm", "+", "AExpr"]),
                ("E2", "AExpr", &["ATerm", "-", "AExpr"]),
                ("E3", "AExpr", &["ATerm"]),
                ("T1", "ATerm", &["AFactor", "*", "ATerm"]),
                ("T2", "ATerm", &["AFactor"]),
                ("F1", "AFactor", &["(", "AExpr", ")"]),
                ("F2", "AFactor", &["Var"]),
                ("F3", "AFactor", &["Const"]),
                ("B1", "BExpr", &["AExpr", "<", "AExpr"]),
                ("B2", "BExpr", &["AExpr", "==", "AExpr"]),
                ("B3", "BExpr", &["not", "BExpr"]),
                ("B4", "BExpr", &["(", "BExpr", "and", "BExpr", ")"]),
            ];
            const VARS: [&str; 5] = ["v0", "v1", "v2", "v3", "v4"];
            const DIGITS: [&str; 10] = ["0", "1", "2", "3", "4", "5", "6", "7", "8", "9"];
            let var_names: Vec<String> = (1..=5).map(|i| format!("V{i}")).collect();
            let const_names: Vec<String> = (1..=10).map(|i| format!("C{i}")).collect();
            for (name, v) in var_names.iter().zip(VARS.iter()) {
                rules.push((name.as_str(), "Var", std::slice::from_ref(v)));
            }
            for (name, d) in const_names.iter().zip(DIGITS.iter()) {
                rules.push((name.as_str(), "Const", std::slice::from_ref(d)));
            }
            Grammar::from_rules(
                &["Stmt", "SimpStmt", "AExpr", "ATerm", "AFactor", "BExpr", "Var", "Const"],
                "Stmt",
                &rules,
            )
            .expect("built-in grammar resolves")
        })
    }

    pub fn start(&self) -> Nonterminal {
        self.start
    }

    pub fn nonterminal_count(&self) -> usize {
        self.nonterminals.len()
    }

    pub fn nonterminals(&self) -> impl Iterator<Item = Nonterminal> {
        (0..self.nonterminals.len()).map(|i| Nonterminal(i as u8))
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn rules(&self) -> &[ProductionRule] {
        &self.rules
    }

    pub fn rule_count(&self) -> usize {
        self.rules.len()
    }

    pub fn check_nonterminal(&self, nt: Nonterminal) -> Result<()> {
        if nt.index() < self.nonterminals.len() {
            Ok(())
        } else {
            Err(Error::UnknownNonterminal(nt.index()))
        }
    }

    pub fn nonterminal_name(&self, nt: Nonterminal) -> &str {
        &self.nonterminals[nt.index()]
    }

    pub fn nonterminal_by_name(&self, name: &str) -> Result<Nonterminal> {
        self.nonterminals
            .iter()
            .position(|n| n == name)
            .map(|i| Nonterminal(i as u8))
            .ok_or_else(|| Error::UnknownNonterminalName(name.to_string()))
    }

    /// Rules whose lhs is `nt`, in rule-id order.
    pub fn rules_for(&self, nt: Nonterminal) -> Result<Vec<&ProductionRule>> {
        self.check_nonterminal(nt)?;
        Ok(self.by_lhs[nt.index()].iter().map(|id| &self.rules[id.index()]).collect())
    }

    /// Same as [`rules_for`](Self::rules_for) but only the ids; panics on an unknown nonterminal.
    pub fn rule_ids_for(&self, nt: Nonterminal) -> &[RuleId] {
        &self.by_lhs[nt.index()]
    }

    pub fn rule(&self, id: RuleId) -> &ProductionRule {
        &self.rules[id.index()]
    }

    pub fn rule_by_id(&self, id: usize) -> Result<&ProductionRule> {
        self.rules.get(id).ok_or_else(|| Error::UnknownRule(format!("#{id}")))
    }

    pub fn rule_by_name(&self, name: &str) -> Result<&ProductionRule> {
        self.rule_index
            .get(name)
            .map(|id| &self.rules[id.index()])
            .ok_or_else(|| Error::UnknownRule(name.to_string()))
    }

    pub fn token(&self, text: &str) -> Result<Token> {
        self.token_index.get(text).copied().ok_or_else(|| Error::UnknownToken(text.to_string()))
    }

    pub fn token_text(&self, tok: Token) -> &str {
        &self.vocab[tok.index()]
    }

    pub fn symbol_text(&self, sym: Symbol) -> String {
        match sym {
            Symbol::T(t) => format!("\"{}\"", self.token_text(t)),
            Symbol::N(n) => self.nonterminal_name(n).to_string(),
        }
    }

    /// One line per rule: `<id>\t<lhs> -> <rhs>`.
    pub fn rule_table(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            let rhs: Vec<String> = r.rhs.iter().map(|s| self.symbol_text(*s)).collect();
            out.push_str(&format!("{}\t{} -> {}\n", r.id.0, self.nonterminal_name(r.lhs), rhs.join(" ")));
        }
        out
    }

    /// FNV-1a over the rule table text.
    pub fn fingerprint(&self) -> u64 {
        fnv1a(self.rule_table().as_bytes())
    }

    pub fn vocab_fingerprint(&self) -> u64 {
        fnv1a(self.vocab.join("\n").as_bytes())
    }
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Reports unreachable and nonproductive nonterminals, duplicate rhs under one lhs,
/// and structurally broken rules. An empty list means the grammar is usable.
pub fn validate_grammar(g: &Grammar) -> Vec<Defect> {
    let mut defects = Vec::new();
    let n = g.nonterminals.len();
    let name = |nt: Nonterminal| g.nonterminals[nt.index()].clone();

    for r in &g.rules {
        if r.rhs.is_empty() {
            defects.push(Defect::EmptyRhs { rule: r.name.clone() });
        }
        let bad = r.lhs.index() >= n
            || r.rhs.iter().any(|s| match s {
                Symbol::N(nt) => nt.index() >= n,
                Symbol::T(t) => t.index() >= g.vocab.len(),
            });
        if bad {
            defects.push(Defect::UndefinedSymbol { rule: r.name.clone() });
        }
    }
    if !defects.is_empty() {
        return defects;
    }

    // productive: fixpoint over rules whose nonterminals are all productive
    let mut productive = vec![false; n];
    loop {
        let mut changed = false;
        for r in &g.rules {
            if !productive[r.lhs.index()] && r.children().all(|c| productive[c.index()]) {
                productive[r.lhs.index()] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut reachable = vec![false; n];
    let mut stack = vec![g.start];
    reachable[g.start.index()] = true;
    while let Some(nt) = stack.pop() {
        for id in &g.by_lhs[nt.index()] {
            for c in g.rules[id.index()].children() {
                if !reachable[c.index()] {
                    reachable[c.index()] = true;
                    stack.push(c);
                }
            }
        }
    }

    for nt in g.nonterminals() {
        if !reachable[nt.index()] {
            defects.push(Defect::Unreachable(name(nt)));
        }
        if !productive[nt.index()] {
            defects.push(Defect::Nonproductive(name(nt)));
        }
    }

    for nt in g.nonterminals() {
        let mut seen: HashMap<&[Symbol], &str> = HashMap::new();
        for id in &g.by_lhs[nt.index()] {
            let r = &g.rules[id.index()];
            if let Some(first) = seen.insert(&r.rhs, &r.name) {
                defects.push(Defect::Duplicate { lhs: name(nt), rules: (first.to_string(), r.name.clone()) });
            }
        }
    }
    defects
}

/// Terminals that open or close a nested region.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Brackets {
    pub open: [Token; 3],
    pub close: [Token; 3],
}

impl Brackets {
    pub fn of(g: &Grammar) -> Brackets {
        let t = |s| g.token(s).expect("bracket token in vocabulary");
        Brackets { open: [t("("), t("if"), t("while")], close: [t(")"), t("endif"), t("endwhile")] }
    }

    /// +1 for an opener, -1 for a closer, 0 otherwise.
    pub fn delta(&self, tok: Token) -> i32 {
        if self.open.contains(&tok) {
            1
        } else if self.close.contains(&tok) {
            -1
        } else {
            0
        }
    }
}

/// Set of terminals the grammar can emit, sorted; handy for tests.
pub fn terminal_set(g: &Grammar) -> BTreeSet<Token> {
    g.rules
        .iter()
        .flat_map(|r| r.rhs.iter())
        .filter_map(|s| match s {
            Symbol::T(t) => Some(*t),
            Symbol::N(_) => None,
        })
        .collect()
}
