//! Independent reference computations shared by the integration tests and the
//! acceptance harness.

#![allow(dead_code)]

use ngsi::grammar::{Grammar, Nonterminal, RuleId};
use ngsi::guider::{loss_and_gradients, GuiderModel, Params};
use ngsi::sampler::{extract_training_pairs, SampleBucket, Sampler, TrainingPair};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rules whose left-hand side is `nt`, read straight off the rule list.
pub fn applicable(g: &Grammar, nt: Nonterminal) -> Vec<RuleId> {
    g.rules().iter().filter(|r| r.lhs == nt).map(|r| r.id).collect()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Mean masked cross-entropy computed with plain loops.
pub fn scalar_loss(g: &Grammar, batch: &[TrainingPair], p: &Params<f64>) -> f64 {
    let hd = p.u_z.nrows();
    let ed = p.embedding.ncols();
    let mut total = 0.0;
    for pair in batch {
        let mut h = vec![0.0; hd];
        for tok in &pair.input.0 {
            let x: Vec<f64> = (0..ed).map(|i| p.embedding[[tok.index(), i]]).collect();
            let pre = |w: &ndarray::Array2<f64>, u: &ndarray::Array2<f64>, b: &ndarray::Array1<f64>, hv: &[f64], j: usize| {
                let mut a = b[j];
                for i in 0..ed {
                    a += x[i] * w[[i, j]];
                }
                for i in 0..hd {
                    a += hv[i] * u[[i, j]];
                }
                a
            };
            let z: Vec<f64> = (0..hd).map(|j| sig(pre(&p.w_z, &p.u_z, &p.b_z, &h, j))).collect();
            let r: Vec<f64> = (0..hd).map(|j| sig(pre(&p.w_r, &p.u_r, &p.b_r, &h, j))).collect();
            let rh: Vec<f64> = (0..hd).map(|i| r[i] * h[i]).collect();
            let c: Vec<f64> = (0..hd).map(|j| pre(&p.w_h, &p.u_h, &p.b_h, &rh, j).tanh()).collect();
            h = (0..hd).map(|j| (1.0 - z[j]) * h[j] + z[j] * c[j]).collect();
        }
        let ids = applicable(g, pair.nt);
        let logit = |k: usize| p.b_out[k] + (0..hd).map(|i| h[i] * p.w_out[[i, k]]).sum::<f64>();
        let max = ids.iter().map(|id| logit(id.index())).fold(f64::NEG_INFINITY, f64::max);
        let lse = max + ids.iter().map(|id| (logit(id.index()) - max).exp()).sum::<f64>().ln();
        total += lse - logit(pair.label.index());
    }
    total / batch.len() as f64
}

/// `n` training pairs drawn from random programs.
pub fn random_pairs(g: &Grammar, seed: u64, n: usize) -> Vec<TrainingPair> {
    let sampler = Sampler::new(g, SampleBucket::new((4, 15), (1, 9), seed)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let pairs = extract_training_pairs(g, &sampler.sample_indexed(i as u64).1);
            pairs[rng.random_range(0..pairs.len())].clone()
        })
        .collect()
}

pub const GRAD_FLOOR: f64 = 1e-2;

/// Largest relative error between the 32-bit analytic gradient and a 64-bit
/// central difference of [`scalar_loss`], for one random model and batch.
pub fn gradient_check(g: &Grammar, seed: u64, embedding: usize, hidden: usize, batch: usize) -> f64 {
    let model = GuiderModel::<f32>::init(g, embedding, hidden, seed);
    let pairs = random_pairs(g, seed.wrapping_add(1000), batch);
    let (_, analytic) = loss_and_gradients(g, &pairs, &model).unwrap();
    let analytic: Vec<Vec<f32>> = analytic.slices().iter().map(|s| s.to_vec()).collect();

    let mut p64 = model.cast::<f64>().params;
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for t in 0..analytic.len() {
        for i in 0..analytic[t].len() {
            let orig = p64.slices()[t][i];
            p64.slices_mut()[t][i] = orig + eps;
            let up = scalar_loss(g, &pairs, &p64);
            p64.slices_mut()[t][i] = orig - eps;
            let down = scalar_loss(g, &pairs, &p64);
            p64.slices_mut()[t][i] = orig;
            let numeric = (up - down) / (2.0 * eps);
            let a = f64::from(analytic[t][i]);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}
