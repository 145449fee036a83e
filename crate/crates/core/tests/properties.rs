mod common;

use ngsi::ast::{self, ast_equal, depth, pretty_print, Ast};
use ngsi::decompose::{decompose, reassemble};
use std::ops::Range;

use ngsi::engine::{Engine, InferConfig, Mode, OracleSelector, RuleSelector, SpanScorer};
use ngsi::grammar::{Grammar, Nonterminal, Symbol, Token};
use ngsi::guider::{predict_rule_distribution, Guider, GuiderModel};
use ngsi::reference::reference_parse;
use ngsi::sampler::{measure, SampleBucket, Sampler};
use ngsi::search::{search_tree, SearchConfig};
use proptest::prelude::*;

fn g() -> &'static Grammar {
    Grammar::builtin()
}

fn program(bucket: (usize, usize, usize, usize), seed: u64, index: u64) -> (Vec<Token>, Ast) {
    let b = SampleBucket::new((bucket.0, bucket.1), (bucket.2, bucket.3), seed);
    let (t, tree) = Sampler::new(g(), b).unwrap().sample_indexed(index);
    (t.0, tree)
}

fn yield_of(t: &Ast) -> Vec<Token> {
    pretty_print(g(), t).unwrap().0
}

/// Oracle distribution blended with per-span pseudo-random scores, so greedy
/// choices are right often but not always.
struct NoisyOracle {
    seed: u64,
    weight: f64,
}

struct NoisyScorer<'a> {
    inner: Box<dyn SpanScorer + 'a>,
    g: &'a Grammar,
    seed: u64,
    weight: f64,
}

impl RuleSelector for NoisyOracle {
    fn scorer<'a>(&'a self, g: &'a Grammar, tokens: &'a [Token]) -> Box<dyn SpanScorer + 'a> {
        Box::new(NoisyScorer { inner: OracleSelector.scorer(g, tokens), g, seed: self.seed, weight: self.weight })
    }
}

impl SpanScorer for NoisyScorer<'_> {
    fn distribution(&mut self, span: Range<usize>, nt: Nonterminal) -> Vec<f64> {
        let mut p = self.inner.distribution(span.clone(), nt);
        let mut h = self.seed ^ ((span.start as u64) << 32) ^ ((span.end as u64) << 16) ^ nt.0 as u64;
        for id in self.g.rule_ids_for(nt) {
            h = h.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(id.0 as u64 + 1);
            let noise = ((h >> 11) as f64) / ((1u64 << 53) as f64);
            p[id.index()] = self.weight * p[id.index()] + noise;
        }
        let total: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= total);
        p
    }
}

fn noisy_engines(seed: u64) -> (Engine<'static, NoisyOracle>, Engine<'static, NoisyOracle>) {
    let sel = || NoisyOracle { seed, weight: 0.8 };
    (
        Engine::new(g(), sel(), InferConfig::with_mode(Mode::Greedy)).unwrap(),
        Engine::new(g(), sel(), InferConfig::with_mode(Mode::Beam)).unwrap(),
    )
}

fn check_node(t: &Ast) {
    let rule = g().rule(t.rule);
    let tokens = yield_of(t);
    let parts = decompose(g(), &tokens, rule).unwrap();
    let expected: Vec<Vec<Token>> = t.children.iter().map(yield_of).collect();
    assert_eq!(parts, expected);
    assert_eq!(reassemble(rule, &parts), tokens);
    t.children.iter().for_each(check_node);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn print_parse_round_trip(seed in any::<u64>(), index in 0u64..1000) {
        let (tokens, tree) = program((4, 40, 1, 12), seed, index);
        let parsed = reference_parse(g(), &tokens, g().start()).unwrap();
        prop_assert!(ast_equal(&parsed, &tree));
        prop_assert_eq!(yield_of(&parsed), tokens);
    }

    #[test]
    fn serialized_trees_read_back(seed in any::<u64>(), index in 0u64..1000) {
        let (_, tree) = program((4, 40, 1, 12), seed, index);
        let text = ast::serialize(g(), &tree);
        prop_assert!(ast_equal(&ast::deserialize(g(), &text).unwrap(), &tree));
    }

    #[test]
    fn decomposition_matches_children(seed in any::<u64>(), index in 0u64..1000) {
        let (_, tree) = program((4, 30, 1, 12), seed, index);
        check_node(&tree);
    }

    #[test]
    fn samples_stay_in_bucket(lo in 4usize..20, span in 0usize..12, dlo in 6usize..10, dspan in 0usize..4, seed in any::<u64>()) {
        let b = SampleBucket::new((lo, lo + span), (dlo, dlo + dspan), seed);
        if let Ok(s) = Sampler::new(g(), b) {
            for i in 0..8 {
                let (t, tree) = s.sample_indexed(i);
                let (l, d) = measure(&t, &tree);
                prop_assert!((lo..=lo + span).contains(&l));
                prop_assert!((dlo..=dlo + dspan).contains(&d));
                prop_assert_eq!(d, depth(&tree));
                prop_assert_eq!(yield_of(&tree), t.0);
            }
        }
    }

    #[test]
    fn unverified_output_still_yields_input(seed in 0u64..50, index in 0u64..200, mode in prop::sample::select(vec![Mode::Greedy, Mode::Fallback, Mode::Beam])) {
        let model = GuiderModel::<f32>::init(g(), 8, 16, seed);
        let cfg = InferConfig { mode, verify_reconstruction: false, ..InferConfig::default() };
        let engine = Engine::with_model(g(), &model, cfg).unwrap();
        let (tokens, _) = program((4, 20, 1, 10), seed, index);
        if let Ok(t) = engine.infer(&tokens, g().start()) {
            t.validate(g()).unwrap();
            prop_assert_eq!(yield_of(&t), tokens);
        }
    }

    #[test]
    fn beam_never_scores_below_greedy(seed in any::<u64>(), index in 0u64..200) {
        let (tokens, _) = program((4, 20, 1, 10), seed, index);
        let (greedy, beam) = noisy_engines(seed);
        if let Ok(gt) = greedy.infer(&tokens, g().start()) {
            let bt = beam.infer(&tokens, g().start());
            prop_assert!(bt.is_ok());
            let bt = bt.unwrap();
            prop_assert!(beam.log_prob(&tokens, &bt).unwrap() >= greedy.log_prob(&tokens, &gt).unwrap() - 1e-9);
        }
    }

    #[test]
    fn inapplicable_rules_get_no_mass(seed in 0u64..20, raw in prop::collection::vec(0usize..1000, 1..20), nt in 0u8..8) {
        let model = GuiderModel::<f32>::init(g(), 8, 16, seed);
        let tokens: Vec<Token> = raw.iter().map(|r| Token((r % g().vocab_size()) as u16)).collect();
        let nt = Nonterminal(nt);
        let ok = common::applicable(g(), nt);
        let slow = predict_rule_distribution(g(), &tokens, nt, &model).unwrap();
        let guider = Guider::new(g(), &model).unwrap();
        let fast = guider.distribution(&guider.encode(&tokens), nt);
        for k in 0..g().rule_count() {
            if !ok.iter().any(|id| id.index() == k) {
                prop_assert_eq!(slow[k], 0.0);
                prop_assert_eq!(fast[k], 0.0);
            }
        }
        let total: f64 = fast.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn search_agrees_with_reference(seed in any::<u64>(), index in 0u64..1000) {
        let (tokens, tree) = program((4, 12, 1, 12), seed, index);
        let found = search_tree(g(), &tokens, &SearchConfig::default()).unwrap();
        prop_assert!(ast_equal(&found, &tree));
    }
}

#[test]
fn every_rule_right_hand_side_reassembles() {
    for rule in g().rules() {
        let parts: Vec<Vec<Token>> = rule.children().map(|c| vec![Token(c.0 as u16)]).collect();
        let joined = reassemble(rule, &parts);
        let expected = rule.rhs.iter().map(|s| match s {
            Symbol::T(t) => *t,
            Symbol::N(c) => Token(c.0 as u16),
        });
        assert!(joined.into_iter().eq(expected));
    }
}

#[test]
fn beam_dominance_is_exercised() {
    let mut compared = 0;
    let mut greedy_failed = 0;
    let mut beam_recovered = 0;
    for seed in 0..40 {
        let (greedy, beam) = noisy_engines(seed);
        for index in 0..10 {
            let (tokens, _) = program((4, 20, 1, 10), seed, index);
            if let Ok(gt) = greedy.infer(&tokens, g().start()) {
                let bt = beam.infer(&tokens, g().start()).unwrap();
                assert!(beam.log_prob(&tokens, &bt).unwrap() >= greedy.log_prob(&tokens, &gt).unwrap() - 1e-9);
                compared += 1;
            } else {
                greedy_failed += 1;
                if beam.infer(&tokens, g().start()).is_ok() {
                    beam_recovered += 1;
                }
            }
        }
    }
    assert!(compared >= 20, "only {compared} greedy successes");
    assert!(greedy_failed >= 20, "only {greedy_failed} greedy failures");
    assert!(beam_recovered > 0);
}
