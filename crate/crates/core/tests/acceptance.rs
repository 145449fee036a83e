//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero if any criterion fails.

mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use ngsi::ast::{ast_equal, pretty_print, TokenSeq};
use ngsi::engine::{Engine, InferConfig, Mode, OracleSelector};
use ngsi::eval::{evaluate_grid, EvalConfig, Method};
use ngsi::grammar::{Grammar, Nonterminal, Token};
use ngsi::guider::{heldout_step_accuracy, EVAL_SEED_BIT, predict_rule_distribution, save_model, train, Guider, GuiderModel, TrainConfig};
use ngsi::reference::reference_parse;
use ngsi::sampler::{curriculum_schedule, SampleBucket, Sampler};
use ngsi::search::{iddfs_parse_with, GrammarBounds, SearchConfig, SearchOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn eval_bucket(length: (usize, usize), depth: (usize, usize), seed: u64) -> SampleBucket {
    SampleBucket::new(length, depth, seed | EVAL_SEED_BIT)
}

fn oracle_equivalence(g: &Grammar) -> Outcome {
    let sampler = Sampler::new(g, eval_bucket((4, 40), (1, 12), 1)).map_err(|e| e.to_string())?;
    let t0 = Instant::now();
    let engine = Engine::new(g, OracleSelector, InferConfig::default()).map_err(|e| e.to_string())?;
    let mut matched = 0;
    for i in 0..10_000 {
        let (tokens, tree) = sampler.sample_indexed(i);
        if engine.infer(tokens.as_slice(), g.start()).is_ok_and(|t| ast_equal(&t, &tree)) {
            matched += 1;
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    check(matched == 10_000 && secs < 60.0, format!("{matched}/10000 trees equal, {secs:.1} s"))
}

fn round_trip(g: &Grammar) -> Outcome {
    let sampler = Sampler::new(g, eval_bucket((4, 40), (1, 12), 2)).map_err(|e| e.to_string())?;
    let mut failures = 0;
    for i in 0..10_000 {
        let (tokens, tree) = sampler.sample_indexed(i);
        let printed_parse = reference_parse(g, tokens.as_slice(), g.start()).and_then(|t| pretty_print(g, &t));
        let parsed_print = pretty_print(g, &tree).and_then(|s| reference_parse(g, s.as_slice(), g.start()));
        let ok_a = printed_parse.is_ok_and(|s| s == tokens);
        let ok_b = parsed_print.is_ok_and(|t| ast_equal(&t, &tree));
        if !(ok_a && ok_b) {
            failures += 1;
        }
    }
    check(failures == 0, format!("{failures} failures over 10000 programs"))
}

fn gradient(g: &Grammar) -> Outcome {
    let worst = (0..100u64).map(|seed| common::gradient_check(g, seed, 4, 4, 3)).fold(0.0, f64::max);
    check(worst < 1e-3, format!("max relative error {worst:.2e} over 100 models (floor {})", common::GRAD_FLOOR))
}

fn in_distribution(g: &Grammar, model_path: &Path) -> (Outcome, Option<GuiderModel<f32>>) {
    let cfg = TrainConfig { seed: 1, ..TrainConfig::default() };
    let t0 = Instant::now();
    let (model, log) = match train(g, &curriculum_schedule(4), &cfg) {
        Ok(r) => r,
        Err(e) => return (Err(format!("training failed: {e}")), None),
    };
    let secs = t0.elapsed().as_secs_f64();
    if let Err(e) = save_model(&model, model_path) {
        return (Err(e.to_string()), Some(model));
    }
    let bucket = eval_bucket((5, 15), (1, 9), 4);
    let acc = match heldout_step_accuracy(g, &model, &bucket, 1000) {
        Ok(a) => a,
        Err(e) => return (Err(e.to_string()), Some(model)),
    };
    let iterations: usize = log.stage_accuracy().len();
    (
        check(
            acc >= 0.99 && secs <= 7200.0,
            format!("held-out step accuracy {acc:.4} on 1000 programs, {iterations} stages, training {secs:.0} s"),
        ),
        Some(model),
    )
}

fn generalization_and_latency(g: &Grammar, model: Option<&GuiderModel<f32>>) -> (Outcome, Outcome) {
    let Some(model) = model else {
        let e = Err("no trained model".to_string());
        return (e.clone(), e);
    };
    let cfg = EvalConfig { methods: vec![Method::Ngsi(Mode::Fallback)], seed: 5, ..EvalConfig::default() };
    let records = match evaluate_grid(g, Some(model), &cfg) {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let rate = |keep: &dyn Fn(&ngsi::eval::EvalRecord) -> bool| ngsi::eval::mean_rate(&records, keep).unwrap_or(0.0);
    let deep = rate(&|r| r.depth == 11);
    let long = rate(&|r| r.length == 30);
    let overall = rate(&|_| true);
    let gen = check(
        deep >= 0.85 && long >= 0.85,
        format!("depth-11 cells {deep:.4}, length-30 cells {long:.4}, all cells {overall:.4}"),
    );
    let worst = records.iter().filter_map(|r| r.p95_time_s).fold(0.0, f64::max);
    let nonempty = records.iter().filter(|r| r.count > 0).count();
    let lat = check(worst < 1.0, format!("largest per-cell p95 {:.4} s over {nonempty} nonempty cells", worst));
    (gen, lat)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn baseline_contrast(g: &Grammar, model: Option<&GuiderModel<f32>>) -> Outcome {
    let bounds = GrammarBounds::of(g);
    let cfg = SearchConfig::default();
    let search = |t: &TokenSeq| iddfs_parse_with(g, &bounds, t.as_slice(), g.start(), &cfg).map(|r| r.0);

    let small = Sampler::new(g, eval_bucket((4, 12), (6, 12), 6)).map_err(|e| e.to_string())?;
    let mut exact = 0;
    for i in 0..200 {
        let (tokens, tree) = small.sample_indexed(i);
        if matches!(search(&tokens), Ok(SearchOutcome::Found(t)) if ast_equal(&t, &tree)) {
            exact += 1;
        }
    }

    const REPEATS: usize = 20;
    let timed = |length: usize, seed: u64| -> Result<(f64, Vec<TokenSeq>), String> {
        let s = Sampler::new(g, eval_bucket((length, length), (1, 64), seed)).map_err(|e| e.to_string())?;
        let programs: Vec<TokenSeq> = (0..200).map(|i| s.sample_indexed(i).0).collect();
        let mut times = Vec::new();
        for p in &programs {
            let t0 = Instant::now();
            for _ in 0..REPEATS {
                search(p).map_err(|e| e.to_string())?;
            }
            times.push(t0.elapsed().as_secs_f64() / REPEATS as f64);
        }
        Ok((median(times), programs))
    };
    let (t8, p8) = timed(8, 7)?;
    let (t16, p16) = timed(16, 8)?;
    let ratio = t16 / t8;

    let mut guided_worst: f64 = 0.0;
    if let Some(m) = model {
        let engine = Engine::with_model(g, m, InferConfig::default()).map_err(|e| e.to_string())?;
        for p in p8.iter().chain(&p16) {
            let t0 = Instant::now();
            engine.infer(p.as_slice(), g.start()).map_err(|e| e.to_string())?;
            guided_worst = guided_worst.max(t0.elapsed().as_secs_f64());
        }
    }
    check(
        exact == 200 && ratio >= 4.0 && model.is_some() && guided_worst < 1.0,
        format!(
            "search exact {exact}/200 (length <= 12, depth 6..12); median search time length 8 {:.2} us, length 16 {:.2} us, ratio {ratio:.2} (need >= 4); guided max {:.4} s",
            t8 * 1e6,
            t16 * 1e6,
            guided_worst
        ),
    )
}

fn masking(g: &Grammar, model: Option<&GuiderModel<f32>>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let random = GuiderModel::<f32>::init(g, 16, 32, 8);
    let models: Vec<&GuiderModel<f32>> = model.into_iter().chain(std::iter::once(&random)).collect();
    let guiders: Vec<Guider> = models.iter().map(|m| Guider::new(g, m).unwrap()).collect();
    let mut worst_sum: f64 = 0.0;
    let mut leaked = 0usize;
    for i in 0..10_000 {
        let which = i % models.len();
        let len = rng.random_range(1..=24);
        let tokens: Vec<Token> = (0..len).map(|_| Token(rng.random_range(0..g.vocab_size()) as u16)).collect();
        let nt = Nonterminal(rng.random_range(0..g.nonterminal_count()) as u8);
        let ok = common::applicable(g, nt);
        let slow = predict_rule_distribution(g, &tokens, nt, models[which]).map_err(|e| e.to_string())?;
        let fast = guiders[which].distribution(&guiders[which].encode(&tokens), nt);
        for (k, (a, b)) in slow.iter().zip(&fast).enumerate() {
            let inside = ok.iter().any(|id| id.index() == k);
            if !inside && (*a != 0.0 || *b != 0.0) {
                leaked += 1;
            }
        }
        let s1: f64 = ok.iter().map(|id| f64::from(slow[id.index()])).sum();
        let s2: f64 = ok.iter().map(|id| fast[id.index()]).sum();
        worst_sum = worst_sum.max((s1 - 1.0).abs()).max((s2 - 1.0).abs());
    }
    check(
        leaked == 0 && worst_sum <= 1e-6,
        format!("{leaked} nonzero inapplicable entries, max |applicable mass - 1| = {worst_sum:.2e}, {} models", models.len()),
    )
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_ngsi")).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("ngsi {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism(dir: &Path) -> Outcome {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let mut identical = Vec::new();
    for run in ["a", "b"] {
        run_cli(&["gen", "--bucket", "5:15:1:9", "--n", "1000", "--seed", "7", "--out", &p(&format!("corpus_{run}.txt")), "--dataset", &p(&format!("pairs_{run}.tsv"))])?;
        run_cli(&[
            "train", "--stages", "2", "--iterations", "40", "--eval-every", "20", "--embedding", "8", "--hidden", "24", "--heldout", "20",
            "--seed", "3", "--out", &p(&format!("model_{run}.bin")), "--log", &p(&format!("log_{run}.csv")),
        ])?;
        run_cli(&[
            "eval", "--model", &p("model_a.bin"), "--methods", "ngsi,ngsi-greedy,ngsi-beam,search,oracle", "--depths", "6..10", "--lengths",
            "8..16", "--per-cell", "5", "--seed", "9", "--no-timing", "--out", &p(&format!("grid_{run}.csv")),
        ])?;
    }
    run_cli(&[
        "eval", "--model", &p("model_a.bin"), "--methods", "ngsi,ngsi-greedy,ngsi-beam,search,oracle", "--depths", "6..10", "--lengths", "8..16",
        "--per-cell", "5", "--seed", "9", "--no-timing", "--jobs", "2", "--out", &p("grid_c.csv"),
    ])?;
    for (a, b) in [
        ("corpus_a.txt", "corpus_b.txt"),
        ("pairs_a.tsv", "pairs_b.tsv"),
        ("model_a.bin", "model_b.bin"),
        ("log_a.csv", "log_b.csv"),
        ("grid_a.csv", "grid_b.csv"),
        ("grid_a.csv", "grid_c.csv"),
    ] {
        let x = std::fs::read(dir.join(a)).map_err(|e| e.to_string())?;
        let y = std::fs::read(dir.join(b)).map_err(|e| e.to_string())?;
        identical.push((a, b, x == y && !x.is_empty()));
    }
    let same = identical.iter().filter(|t| t.2).count();
    let differing: Vec<String> = identical.iter().filter(|t| !t.2).map(|t| format!("{} vs {}", t.0, t.1)).collect();
    check(same == identical.len(), format!("{same}/{} artifact pairs byte-identical {differing:?}", identical.len()))
}

fn main() {
    let g = Grammar::builtin();
    let dir = tempfile::tempdir().expect("temp dir");
    let model_path: PathBuf = dir.path().join("model.bin");
    let mut results: Vec<(&str, Outcome, f64)> = Vec::new();
    let mut timed = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let t0 = Instant::now();
        let r = f();
        let secs = t0.elapsed().as_secs_f64();
        let (tag, detail) = match &r {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{tag}] {name}: {detail} ({secs:.1} s)");
        results.push((name, r, secs));
    };

    timed("1 oracle equivalence", &mut || oracle_equivalence(g));
    timed("2 round-trip soundness", &mut || round_trip(g));
    timed("3 gradient check", &mut || gradient(g));
    let mut model = None;
    timed("4 in-distribution guider quality", &mut || {
        let (r, m) = in_distribution(g, &model_path);
        model = m;
        r
    });
    let mut lat = Err("not run".to_string());
    timed("5 generalization", &mut || {
        let (gen, l) = generalization_and_latency(g, model.as_ref());
        lat = l;
        gen
    });
    timed("6 latency", &mut || lat.clone());
    timed("7 baseline contrast", &mut || baseline_contrast(g, model.as_ref()));
    timed("8 masking invariant", &mut || masking(g, model.as_ref()));
    timed("9 determinism", &mut || determinism(dir.path()));

    let failed = results.iter().filter(|r| r.1.is_err()).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
