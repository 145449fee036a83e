use std::path::PathBuf;
use std::time::Duration;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

use ngsi::ast::{self, TokenSeq};
use ngsi::engine::{Engine, InferConfig, Mode, OracleSelector};
use ngsi::error::Error;
use ngsi::eval::{evaluate_grid, to_csv, EvalConfig, Method};
use ngsi::grammar::{Grammar, Nonterminal};
use ngsi::guider::{load_model, predict_rule_distribution, save_model, Guider, GuiderModel, TrainConfig};
use ngsi::reference;
use ngsi::sampler::{self, SampleBucket};
use ngsi::search::{iddfs_parse, SearchConfig, SearchOutcome};

create_exception!(ngsi_py, NgsiError, PyException);

fn err(e: Error) -> PyErr {
    NgsiError::new_err(format!("{} ({})", e, e.kind()))
}

fn grammar() -> &'static Grammar {
    Grammar::builtin()
}

fn tokens(text: &str) -> PyResult<TokenSeq> {
    TokenSeq::parse(grammar(), text).map_err(err)
}

fn nonterminal(name: &str) -> PyResult<Nonterminal> {
    grammar().nonterminal_by_name(name).map_err(err)
}

fn mode(name: &str) -> PyResult<Mode> {
    name.parse().map_err(err)
}

/// Trained or freshly initialised rule-selection model.
#[pyclass(name = "GuiderModel", module = "ngsi_py")]
struct PyGuiderModel {
    inner: GuiderModel<f32>,
}

#[pymethods]
impl PyGuiderModel {
    #[staticmethod]
    #[pyo3(signature = (embedding=64, hidden=256, seed=0))]
    fn init(embedding: usize, hidden: usize, seed: u64) -> Self {
        PyGuiderModel { inner: GuiderModel::init(grammar(), embedding, hidden, seed) }
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        load_model(&path, grammar()).map(|inner| PyGuiderModel { inner }).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_model(&self.inner, &path).map_err(err)
    }

    fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.inner.params.tensors().into_iter().map(|(n, s, _)| (n.to_string(), s)).collect()
    }

    fn parameter_count(&self) -> usize {
        self.inner.params.parameter_count()
    }

    /// Probability of every rule id for `text` derived from `nt`.
    #[pyo3(signature = (text, nt="Stmt"))]
    fn predict(&self, text: &str, nt: &str) -> PyResult<Vec<f32>> {
        predict_rule_distribution(grammar(), tokens(text)?.as_slice(), nonterminal(nt)?, &self.inner).map_err(err)
    }
}

/// Uniform sampler over programs inside a length/depth box.
#[pyclass(name = "Sampler", module = "ngsi_py")]
struct PySampler {
    inner: sampler::Sampler<'static>,
}

#[pymethods]
impl PySampler {
    #[new]
    #[pyo3(signature = (min_length, max_length, min_depth, max_depth, seed=0))]
    fn new(min_length: usize, max_length: usize, min_depth: usize, max_depth: usize, seed: u64) -> PyResult<Self> {
        let bucket = SampleBucket::new((min_length, max_length), (min_depth, max_depth), seed);
        sampler::Sampler::new(grammar(), bucket).map(|inner| PySampler { inner }).map_err(err)
    }

    /// The `index`-th program as (token text, tree text).
    fn sample(&self, index: u64) -> (String, String) {
        let (t, tree) = self.inner.sample_indexed(index);
        (t.to_text(grammar()), ast::serialize(grammar(), &tree))
    }

    #[pyo3(signature = (n, jobs=1))]
    fn corpus(&self, py: Python<'_>, n: usize, jobs: usize) -> Vec<(String, String)> {
        let g = grammar();
        let programs = py.detach(|| self.inner.corpus(n, jobs));
        programs.into_iter().map(|(t, tree)| (t.to_text(g), ast::serialize(g, &tree))).collect()
    }
}

/// Guided parser bound to a model.
#[pyclass(name = "Engine", module = "ngsi_py")]
struct PyEngine {
    inner: Engine<'static, Guider>,
}

#[pymethods]
impl PyEngine {
    #[new]
    #[pyo3(signature = (model, mode="fallback", beam_width=4, max_recursion_depth=64, verify=true))]
    fn new(model: &PyGuiderModel, mode: &str, beam_width: usize, max_recursion_depth: usize, verify: bool) -> PyResult<Self> {
        let cfg = InferConfig { mode: self::mode(mode)?, beam_width, max_recursion_depth, verify_reconstruction: verify };
        Engine::with_model(grammar(), &model.inner, cfg).map(|inner| PyEngine { inner }).map_err(err)
    }

    #[pyo3(signature = (text, nt="Stmt"))]
    fn infer(&self, py: Python<'_>, text: &str, nt: &str) -> PyResult<String> {
        let (t, nt) = (tokens(text)?, nonterminal(nt)?);
        let tree = py.detach(|| self.inner.infer(t.as_slice(), nt)).map_err(err)?;
        Ok(ast::serialize(grammar(), &tree))
    }
}

#[pyfunction]
fn rule_table() -> String {
    grammar().rule_table()
}

#[pyfunction]
#[pyo3(signature = (text, nt="Stmt"))]
fn reference_parse(text: &str, nt: &str) -> PyResult<String> {
    let tree = reference::reference_parse(grammar(), tokens(text)?.as_slice(), nonterminal(nt)?).map_err(err)?;
    Ok(ast::serialize(grammar(), &tree))
}

/// Guided inference with the reference parser standing in for the model.
#[pyfunction]
#[pyo3(signature = (text, mode="fallback"))]
fn oracle_infer(text: &str, mode: &str) -> PyResult<String> {
    let engine = Engine::new(grammar(), OracleSelector, InferConfig::with_mode(self::mode(mode)?)).map_err(err)?;
    let tree = engine.infer(tokens(text)?.as_slice(), grammar().start()).map_err(err)?;
    Ok(ast::serialize(grammar(), &tree))
}

#[pyfunction]
fn pretty_print(tree: &str) -> PyResult<String> {
    let g = grammar();
    let t = ast::deserialize(g, tree).map_err(err)?;
    Ok(ast::pretty_print(g, &t).map_err(err)?.to_text(g))
}

/// (input text, nonterminal name, rule id) for every node of a tree.
#[pyfunction]
fn training_pairs(tree: &str) -> PyResult<Vec<(String, String, u16)>> {
    let g = grammar();
    let t = ast::deserialize(g, tree).map_err(err)?;
    Ok(sampler::extract_training_pairs(g, &t)
        .into_iter()
        .map(|p| (p.input.to_text(g), g.nonterminal_name(p.nt).to_string(), p.label.0))
        .collect())
}

/// Exhaustive baseline; `None` when the time limit runs out.
#[pyfunction]
#[pyo3(signature = (text, max_depth=64, time_limit=60.0))]
fn search(py: Python<'_>, text: &str, max_depth: usize, time_limit: f64) -> PyResult<Option<String>> {
    let t = tokens(text)?;
    let limit = Duration::try_from_secs_f64(time_limit).map_err(|e| NgsiError::new_err(e.to_string()))?;
    let cfg = SearchConfig { max_depth, time_limit: limit };
    match py.detach(|| iddfs_parse(grammar(), t.as_slice(), &cfg)).map_err(err)?.0 {
        SearchOutcome::Found(tree) => Ok(Some(ast::serialize(grammar(), &tree))),
        SearchOutcome::Timeout => Ok(None),
        SearchOutcome::Exhausted => Err(err(Error::Unparseable { furthest: 0, found: None })),
    }
}

/// Curriculum training; returns the model and the training log as CSV text.
#[pyfunction]
#[pyo3(signature = (stages=4, iterations=2000, batch_size=64, embedding=64, hidden=256, eval_every=250, heldout=200, seed=0))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    stages: usize,
    iterations: usize,
    batch_size: usize,
    embedding: usize,
    hidden: usize,
    eval_every: usize,
    heldout: usize,
    seed: u64,
) -> PyResult<(PyGuiderModel, String)> {
    let cfg = TrainConfig {
        seed,
        embedding,
        hidden,
        batch_size,
        iterations_per_stage: iterations,
        eval_every,
        heldout_programs: heldout,
        ..TrainConfig::default()
    };
    let schedule = sampler::curriculum_schedule(stages.max(1));
    let (model, log) = py.detach(|| ngsi::guider::train(grammar(), &schedule, &cfg)).map_err(err)?;
    Ok((PyGuiderModel { inner: model }, log.to_csv()))
}

/// Accuracy grid as CSV text, timing columns left empty.
#[pyfunction]
#[pyo3(signature = (methods, depths, lengths, per_cell=100, seed=0, model=None))]
fn evaluate(
    py: Python<'_>,
    methods: Vec<String>,
    depths: (usize, usize),
    lengths: Vec<usize>,
    per_cell: usize,
    seed: u64,
    model: Option<&PyGuiderModel>,
) -> PyResult<String> {
    let methods = methods.iter().map(|m| m.parse::<Method>()).collect::<Result<Vec<_>, _>>().map_err(err)?;
    let cfg = EvalConfig { methods, depths: depths.0..=depths.1, lengths, per_cell, seed, timing: false, ..EvalConfig::default() };
    let model = model.map(|m| &m.inner);
    let records = py.detach(|| evaluate_grid(grammar(), model, &cfg)).map_err(err)?;
    Ok(to_csv(&records))
}

#[pymodule]
pub fn ngsi_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("NgsiError", m.py().get_type::<NgsiError>())?;
    m.add_class::<PyGuiderModel>()?;
    m.add_class::<PySampler>()?;
    m.add_class::<PyEngine>()?;
    m.add_function(wrap_pyfunction!(rule_table, m)?)?;
    m.add_function(wrap_pyfunction!(reference_parse, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_infer, m)?)?;
    m.add_function(wrap_pyfunction!(pretty_print, m)?)?;
    m.add_function(wrap_pyfunction!(training_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(search, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
