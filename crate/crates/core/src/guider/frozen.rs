//! Inference-only view of a trained model.
//!
//! Input projections `embedding·W + b` are tabulated per token, so a step
//! costs two hidden-by-hidden products. Hidden states of every prefix of a
//! span start are cached, which lets the engine score all spans sharing a
//! start with one pass.

use std::collections::HashMap;

use super::GuiderModel;
use crate::error::Result;
use crate::grammar::{Grammar, Nonterminal, RuleId, Token};

#[derive(Clone, Debug)]
pub struct Guider {
    hidden: usize,
    rules: usize,
    /// [vocab × 3·hidden]: z, r and candidate input projections with biases
    proj: Vec<f32>,
    /// [hidden × 2·hidden]: U_z and U_r side by side
    u_zr: Vec<f32>,
    u_h: Vec<f32>,
    /// [rules × hidden], classifier transposed
    w_out_t: Vec<f32>,
    b_out: Vec<f32>,
    applicable: Vec<Vec<RuleId>>,
}

impl Guider {
    pub fn new(g: &Grammar, m: &GuiderModel<f32>) -> Result<Guider> {
        m.check_grammar(g)?;
        let p = &m.params;
        let d = p.dims();
        let h = d.hidden;
        let pz = p.embedding.dot(&p.w_z) + &p.b_z;
        let pr = p.embedding.dot(&p.w_r) + &p.b_r;
        let ph = p.embedding.dot(&p.w_h) + &p.b_h;
        let mut proj = Vec::with_capacity(d.vocab * 3 * h);
        for v in 0..d.vocab {
            proj.extend(pz.row(v).iter());
            proj.extend(pr.row(v).iter());
            proj.extend(ph.row(v).iter());
        }
        let mut u_zr = Vec::with_capacity(2 * h * h);
        for i in 0..h {
            u_zr.extend(p.u_z.row(i).iter());
            u_zr.extend(p.u_r.row(i).iter());
        }
        Ok(Guider {
            hidden: h,
            rules: d.rules,
            proj,
            u_zr,
            u_h: p.u_h.iter().copied().collect(),
            w_out_t: p.w_out.t().iter().copied().collect(),
            b_out: p.b_out.to_vec(),
            applicable: g.nonterminals().map(|nt| g.rule_ids_for(nt).to_vec()).collect(),
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Next hidden state after reading `tok`.
    pub fn step(&self, h: &[f32], tok: Token) -> Vec<f32> {
        let n = self.hidden;
        let base = tok.index() * 3 * n;
        let mut a_zr = self.proj[base..base + 2 * n].to_vec();
        for (i, hi) in h.iter().enumerate() {
            let row = &self.u_zr[i * 2 * n..(i + 1) * 2 * n];
            for (a, u) in a_zr.iter_mut().zip(row) {
                *a += hi * u;
            }
        }
        let sig = |x: f32| 1.0 / (1.0 + (-x).exp());
        let (az, ar) = a_zr.split_at(n);
        let mut a_h = self.proj[base + 2 * n..base + 3 * n].to_vec();
        for i in 0..n {
            let rh = sig(ar[i]) * h[i];
            let row = &self.u_h[i * n..(i + 1) * n];
            for (a, u) in a_h.iter_mut().zip(row) {
                *a += rh * u;
            }
        }
        (0..n)
            .map(|j| {
                let z = sig(az[j]);
                h[j] + z * (a_h[j].tanh() - h[j])
            })
            .collect()
    }

    pub fn encode(&self, tokens: &[Token]) -> Vec<f32> {
        tokens.iter().fold(vec![0.0; self.hidden], |h, t| self.step(&h, *t))
    }

    /// Masked softmax over all rule ids given a final hidden state.
    pub fn distribution(&self, h: &[f32], nt: Nonterminal) -> Vec<f64> {
        let applicable = &self.applicable[nt.index()];
        let mut out = vec![0.0f64; self.rules];
        let logits: Vec<f64> = applicable
            .iter()
            .map(|id| {
                let j = id.index();
                let w = &self.w_out_t[j * self.hidden..(j + 1) * self.hidden];
                let dot: f32 = w.iter().zip(h).map(|(a, b)| a * b).sum();
                f64::from(dot + self.b_out[j])
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for (id, l) in applicable.iter().zip(&logits) {
            out[id.index()] = (l - max).exp() / total;
        }
        out
    }

    /// Argmax over the applicable rules, lowest id on ties.
    pub fn predict(&self, tokens: &[Token], nt: Nonterminal) -> RuleId {
        let dist = self.distribution(&self.encode(tokens), nt);
        argmax(&dist, &self.applicable[nt.index()])
    }
}

pub(crate) fn argmax(dist: &[f64], applicable: &[RuleId]) -> RuleId {
    let mut best = applicable[0];
    for id in applicable {
        if dist[id.index()] > dist[best.index()] {
            best = *id;
        }
    }
    best
}

/// Per-input cache of prefix hidden states, keyed by span start.
#[derive(Debug, Default)]
pub struct PrefixStates {
    by_start: HashMap<usize, Vec<Vec<f32>>>,
}

impl PrefixStates {
    /// Hidden state after reading `tokens[start..end]`.
    pub fn get(&mut self, guider: &Guider, tokens: &[Token], start: usize, end: usize) -> &[f32] {
        let states = self.by_start.entry(start).or_default();
        while states.len() < end - start {
            let next = match states.last() {
                Some(h) => guider.step(h, tokens[start + states.len()]),
                None => guider.step(&vec![0.0; guider.hidden()], tokens[start]),
            };
            states.push(next);
        }
        &states[end - start - 1]
    }
}
