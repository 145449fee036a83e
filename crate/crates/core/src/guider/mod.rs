//! The learned rule selector: token embedding, a unidirectional GRU encoder
//! and a linear classifier whose logits are masked to the rules of the
//! requested nonterminal.
//!
//! Row-vector convention throughout: a pre-activation is `x·W + h·U + b`
//! with `W: [emb × hidden]`, `U: [hidden × hidden]`.

mod adam;
mod backprop;
mod frozen;
mod io;
mod train;

use std::fmt::Debug;

use ndarray::{Array1, Array2, ArrayView1, LinalgScalar, ScalarOperand};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grammar::{Grammar, Nonterminal, Token};

pub use adam::{AdamConfig, AdamState};
pub use backprop::loss_and_gradients;
pub use frozen::{Guider, PrefixStates};
pub use io::{load_model, read_model, save_model, write_model, MODEL_MAGIC};
pub use train::{heldout_step_accuracy, train, LogRow, TrainConfig, TrainLog, EVAL_SEED_BIT};

/// Floating-point type the model can be instantiated with.
pub trait Scalar: Float + LinalgScalar + ScalarOperand + Debug + Send + Sync + std::iter::Sum + 'static {}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub const DEFAULT_EMBEDDING: usize = 64;
pub const DEFAULT_HIDDEN: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub embedding: usize,
    pub hidden: usize,
    pub rules: usize,
}

/// All learnable tensors. Gradients and Adam moments use the same layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T> {
    pub embedding: Array2<T>,
    pub w_z: Array2<T>,
    pub w_r: Array2<T>,
    pub w_h: Array2<T>,
    pub u_z: Array2<T>,
    pub u_r: Array2<T>,
    pub u_h: Array2<T>,
    pub b_z: Array1<T>,
    pub b_r: Array1<T>,
    pub b_h: Array1<T>,
    pub w_out: Array2<T>,
    pub b_out: Array1<T>,
}

pub const TENSOR_NAMES: [&str; 12] =
    ["embedding", "w_z", "w_r", "w_h", "u_z", "u_r", "u_h", "b_z", "b_r", "b_h", "w_out", "b_out"];

impl<T: Scalar> Params<T> {
    pub fn zeros(d: ModelDims) -> Params<T> {
        let m = |r, c| Array2::zeros((r, c));
        let v = |n| Array1::zeros(n);
        Params {
            embedding: m(d.vocab, d.embedding),
            w_z: m(d.embedding, d.hidden),
            w_r: m(d.embedding, d.hidden),
            w_h: m(d.embedding, d.hidden),
            u_z: m(d.hidden, d.hidden),
            u_r: m(d.hidden, d.hidden),
            u_h: m(d.hidden, d.hidden),
            b_z: v(d.hidden),
            b_r: v(d.hidden),
            b_h: v(d.hidden),
            w_out: m(d.hidden, d.rules),
            b_out: v(d.rules),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            vocab: self.embedding.nrows(),
            embedding: self.embedding.ncols(),
            hidden: self.u_z.nrows(),
            rules: self.b_out.len(),
        }
    }

    /// `(name, shape, data)` for every tensor, in [`TENSOR_NAMES`] order.
    pub fn tensors(&self) -> Vec<(&'static str, Vec<usize>, &[T])> {
        let mats = [&self.embedding, &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h];
        let mut out: Vec<(&'static str, Vec<usize>, &[T])> = Vec::with_capacity(12);
        for (name, a) in TENSOR_NAMES[..7].iter().zip(mats) {
            out.push((name, a.shape().to_vec(), a.as_slice().expect("standard layout")));
        }
        for (name, a) in TENSOR_NAMES[7..10].iter().zip([&self.b_z, &self.b_r, &self.b_h]) {
            out.push((name, a.shape().to_vec(), a.as_slice().expect("standard layout")));
        }
        out.push(("w_out", self.w_out.shape().to_vec(), self.w_out.as_slice().expect("standard layout")));
        out.push(("b_out", self.b_out.shape().to_vec(), self.b_out.as_slice().expect("standard layout")));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [T]> {
        let Params { embedding, w_z, w_r, w_h, u_z, u_r, u_h, b_z, b_r, b_h, w_out, b_out } = self;
        let mut out: Vec<&mut [T]> = Vec::with_capacity(12);
        for a in [embedding, w_z, w_r, w_h, u_z, u_r, u_h] {
            out.push(a.as_slice_mut().expect("standard layout"));
        }
        for a in [b_z, b_r, b_h] {
            out.push(a.as_slice_mut().expect("standard layout"));
        }
        out.push(w_out.as_slice_mut().expect("standard layout"));
        out.push(b_out.as_slice_mut().expect("standard layout"));
        out
    }

    pub fn slices(&self) -> Vec<&[T]> {
        self.tensors().into_iter().map(|(_, _, s)| s).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let c2 = |a: &Array2<T>| a.mapv(|x| U::from(x).expect("cast"));
        let c1 = |a: &Array1<T>| a.mapv(|x| U::from(x).expect("cast"));
        Params {
            embedding: c2(&self.embedding),
            w_z: c2(&self.w_z),
            w_r: c2(&self.w_r),
            w_h: c2(&self.w_h),
            u_z: c2(&self.u_z),
            u_r: c2(&self.u_r),
            u_h: c2(&self.u_h),
            b_z: c1(&self.b_z),
            b_r: c1(&self.b_r),
            b_h: c1(&self.b_h),
            w_out: c2(&self.w_out),
            b_out: c1(&self.b_out),
        }
    }
}

/// Parameters plus the fingerprints of the grammar they were trained against.
#[derive(Clone, Debug, PartialEq)]
pub struct GuiderModel<T = f32> {
    pub params: Params<T>,
    pub grammar_fingerprint: u64,
    pub vocab_fingerprint: u64,
}

impl<T: Scalar> GuiderModel<T> {
    /// All-zero model (uniform distributions over applicable rules).
    pub fn zeros(g: &Grammar, embedding: usize, hidden: usize) -> GuiderModel<T> {
        let dims = ModelDims { vocab: g.vocab_size(), embedding, hidden, rules: g.rule_count() };
        GuiderModel {
            params: Params::zeros(dims),
            grammar_fingerprint: g.fingerprint(),
            vocab_fingerprint: g.vocab_fingerprint(),
        }
    }

    /// Matrices uniform in `[-1/sqrt(hidden), 1/sqrt(hidden)]`, biases zero.
    pub fn init(g: &Grammar, embedding: usize, hidden: usize, seed: u64) -> GuiderModel<T> {
        let mut m = Self::zeros(g, embedding, hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = &mut m.params;
        for a in [&mut p.embedding, &mut p.w_z, &mut p.w_r, &mut p.w_h, &mut p.u_z, &mut p.u_r, &mut p.u_h, &mut p.w_out] {
            a.mapv_inplace(|_| T::from(rng.random_range(-bound..bound)).expect("cast"));
        }
        m
    }

    pub fn dims(&self) -> ModelDims {
        self.params.dims()
    }

    pub fn check_grammar(&self, g: &Grammar) -> Result<()> {
        if self.grammar_fingerprint != g.fingerprint() || self.dims().rules != g.rule_count() {
            return Err(Error::ModelMismatch("rule table fingerprint differs".into()));
        }
        if self.vocab_fingerprint != g.vocab_fingerprint() || self.dims().vocab != g.vocab_size() {
            return Err(Error::ModelMismatch("vocabulary fingerprint differs".into()));
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> GuiderModel<U> {
        GuiderModel {
            params: self.params.cast(),
            grammar_fingerprint: self.grammar_fingerprint,
            vocab_fingerprint: self.vocab_fingerprint,
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// One GRU step.
///
/// `z = σ(x·W_z + h·U_z + b_z)`, `r = σ(x·W_r + h·U_r + b_r)`,
/// `c = tanh(x·W_h + (r∘h)·U_h + b_h)`, output `(1 − z)∘h + z∘c`.
pub fn recurrent_cell<T: Scalar>(x: ArrayView1<T>, h: ArrayView1<T>, p: &Params<T>) -> Result<Array1<T>> {
    let d = p.dims();
    if x.len() != d.embedding || h.len() != d.hidden {
        return Err(Error::ShapeMismatch(format!(
            "cell expects x[{}] and h[{}], got x[{}] and h[{}]",
            d.embedding,
            d.hidden,
            x.len(),
            h.len()
        )));
    }
    if !x.iter().chain(h.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("recurrent cell input"));
    }
    let z = (x.dot(&p.w_z) + h.dot(&p.u_z) + &p.b_z).mapv(sigmoid);
    let r = (x.dot(&p.w_r) + h.dot(&p.u_r) + &p.b_r).mapv(sigmoid);
    let rh = &r * &h;
    let c = (x.dot(&p.w_h) + rh.dot(&p.u_h) + &p.b_h).mapv(Float::tanh);
    Ok(&h + &(&z * &(&c - &h)))
}

pub(crate) fn check_tokens<T: Scalar>(tokens: &[Token], m: &GuiderModel<T>) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::EmptyInput);
    }
    let vocab = m.dims().vocab;
    if let Some(t) = tokens.iter().find(|t| t.index() >= vocab) {
        return Err(Error::UnknownToken(format!("#{}", t.0)));
    }
    Ok(())
}

/// Final hidden state after folding the cell over the embedded tokens from `h = 0`.
pub fn encode<T: Scalar>(tokens: &[Token], m: &GuiderModel<T>) -> Result<Array1<T>> {
    check_tokens(tokens, m)?;
    let p = &m.params;
    let mut h = Array1::zeros(p.dims().hidden);
    for tok in tokens {
        h = recurrent_cell(p.embedding.row(tok.index()), h.view(), p)?;
    }
    Ok(h)
}

/// Softmax over the rules of `nt`; every other entry is exactly zero.
pub(crate) fn masked_softmax<T: Scalar>(logits: &[T], applicable: &[crate::grammar::RuleId]) -> Vec<T> {
    let mut out = vec![T::zero(); logits.len()];
    let max = applicable.iter().map(|id| logits[id.index()]).fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for id in applicable {
        let e = (logits[id.index()] - max).exp();
        out[id.index()] = e;
        total = total + e;
    }
    for id in applicable {
        out[id.index()] = out[id.index()] / total;
    }
    out
}

/// Distribution over all rule ids for `tokens` expanded as `nt`.
pub fn predict_rule_distribution<T: Scalar>(g: &Grammar, tokens: &[Token], nt: Nonterminal, m: &GuiderModel<T>) -> Result<Vec<T>> {
    g.check_nonterminal(nt)?;
    let applicable = g.rule_ids_for(nt);
    if applicable.is_empty() {
        return Err(Error::InvalidArgument(format!("{} has no rules", g.nonterminal_name(nt))));
    }
    let h = encode(tokens, m)?;
    let logits = h.dot(&m.params.w_out) + &m.params.b_out;
    Ok(masked_softmax(logits.as_slice().expect("contiguous"), applicable))
}
