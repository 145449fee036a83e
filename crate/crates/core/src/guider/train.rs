//! Curriculum training loop.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::backprop::loss_and_predictions;
use super::{loss_and_gradients, AdamConfig, AdamState, GuiderModel, DEFAULT_EMBEDDING, DEFAULT_HIDDEN};
use crate::error::{Error, Result};
use crate::grammar::Grammar;
use crate::sampler::{extract_training_pairs, SampleBucket, Sampler, TrainingPair};

/// Seeds with this bit set are reserved for evaluation data; training never uses them.
pub const EVAL_SEED_BIT: u64 = 1 << 63;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub embedding: usize,
    pub hidden: usize,
    pub batch_size: usize,
    pub iterations_per_stage: usize,
    pub adam: AdamConfig,
    /// Held-out accuracy is measured (and a log row written) every this many minibatches.
    pub eval_every: usize,
    pub heldout_programs: usize,
    /// A stage ends early once held-out step accuracy reaches this value.
    pub early_stop_accuracy: Option<f64>,
    /// Fresh programs drawn before each minibatch.
    pub programs_per_batch: usize,
    /// Pairs kept per nonterminal class.
    pub pool_capacity: usize,
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            embedding: DEFAULT_EMBEDDING,
            hidden: DEFAULT_HIDDEN,
            batch_size: 64,
            iterations_per_stage: 2000,
            adam: AdamConfig::default(),
            eval_every: 250,
            heldout_programs: 200,
            early_stop_accuracy: Some(0.995),
            programs_per_batch: 4,
            pool_capacity: 2048,
            verbose: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub stage: usize,
    pub iteration: usize,
    pub loss: f64,
    pub heldout_step_acc: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("stage,iteration,loss,heldout_step_acc\n");
        for r in &self.rows {
            writeln!(out, "{},{},{:.6},{:.6}", r.stage, r.iteration, r.loss, r.heldout_step_acc).expect("string write");
        }
        out
    }

    /// Held-out accuracy at the end of each stage.
    pub fn stage_accuracy(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for r in &self.rows {
            match out.last_mut() {
                Some(last) if last.0 == r.stage => last.1 = r.heldout_step_acc,
                _ => out.push((r.stage, r.heldout_step_acc)),
            }
        }
        out
    }
}

/// splitmix64 of a (seed, stage, purpose) triple, eval bit cleared.
pub(crate) fn training_seed(seed: u64, stage: usize, purpose: u64) -> u64 {
    let mut z = seed ^ (stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ purpose.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    (z ^ (z >> 31)) & !EVAL_SEED_BIT
}

/// Fraction of nodes whose rule the model ranks first, over every node of
/// `programs` fresh draws from `bucket` (which carries its own seed).
pub fn heldout_step_accuracy(g: &Grammar, m: &GuiderModel<f32>, bucket: &SampleBucket, programs: usize) -> Result<f64> {
    let sampler = Sampler::new(g, *bucket)?;
    let pairs: Vec<TrainingPair> =
        (0..programs as u64).flat_map(|i| extract_training_pairs(g, &sampler.sample_indexed(i).1)).collect();
    pair_accuracy(g, m, &pairs)
}

pub(crate) fn pair_accuracy(g: &Grammar, m: &GuiderModel<f32>, pairs: &[TrainingPair]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(1.0);
    }
    let mut correct = 0usize;
    for chunk in pairs.chunks(256) {
        let (_, pred) = loss_and_predictions(g, chunk, m)?;
        correct += chunk.iter().zip(pred).filter(|(p, r)| p.label.index() == *r).count();
    }
    Ok(correct as f64 / pairs.len() as f64)
}

/// Runs the schedule in order with one Adam optimizer across all stages.
pub fn train(g: &Grammar, schedule: &[SampleBucket], cfg: &TrainConfig) -> Result<(GuiderModel<f32>, TrainLog)> {
    if cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(Error::InvalidArgument("batch size and eval interval must be positive".into()));
    }
    let mut model = GuiderModel::<f32>::init(g, cfg.embedding, cfg.hidden, cfg.seed);
    let mut adam = AdamState::for_params(cfg.adam, &model.params);
    let mut log = TrainLog::default();
    if cfg.iterations_per_stage == 0 {
        return Ok((model, log));
    }

    for (stage, bucket) in schedule.iter().enumerate() {
        let sampler = Sampler::new(g, bucket.with_seed(training_seed(cfg.seed, stage, 0)))?;
        let heldout_bucket = bucket.with_seed(training_seed(cfg.seed, stage, 1));
        let heldout_sampler = Sampler::new(g, heldout_bucket)?;
        let heldout: Vec<TrainingPair> = (0..cfg.heldout_programs as u64)
            .flat_map(|i| extract_training_pairs(g, &heldout_sampler.sample_indexed(i).1))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(training_seed(cfg.seed, stage, 2));

        let mut pools: Vec<VecDeque<TrainingPair>> = vec![VecDeque::new(); g.nonterminal_count()];
        let mut drawn = 0u64;
        let (mut loss_sum, mut loss_count) = (0.0f64, 0usize);
        for it in 0..cfg.iterations_per_stage {
            for _ in 0..cfg.programs_per_batch.max(1) {
                let (_, tree) = sampler.sample_indexed(drawn);
                drawn += 1;
                for pair in extract_training_pairs(g, &tree) {
                    let pool = &mut pools[pair.nt.index()];
                    if pool.len() == cfg.pool_capacity.max(1) {
                        pool.pop_front();
                    }
                    pool.push_back(pair);
                }
            }
            let classes: Vec<usize> = (0..pools.len()).filter(|&i| !pools[i].is_empty()).collect();
            let batch: Vec<TrainingPair> = (0..cfg.batch_size)
                .map(|_| {
                    let pool = &pools[classes[rng.random_range(0..classes.len())]];
                    pool[rng.random_range(0..pool.len())].clone()
                })
                .collect();

            let (loss, grads) = loss_and_gradients(g, &batch, &model)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { stage });
            }
            adam.step_params(&mut model.params, &grads).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { stage },
                other => other,
            })?;
            loss_sum += f64::from(loss);
            loss_count += 1;

            let last = it + 1 == cfg.iterations_per_stage;
            if (it + 1) % cfg.eval_every == 0 || last {
                let acc = pair_accuracy(g, &model, &heldout)?;
                let row = LogRow { stage, iteration: it + 1, loss: loss_sum / loss_count as f64, heldout_step_acc: acc };
                if cfg.verbose {
                    eprintln!(
                        "stage {} ({}) iter {} loss {:.4} heldout {:.4}",
                        row.stage, bucket, row.iteration, row.loss, row.heldout_step_acc
                    );
                }
                log.rows.push(row);
                loss_sum = 0.0;
                loss_count = 0;
                if cfg.early_stop_accuracy.is_some_and(|t| acc >= t) {
                    break;
                }
            }
        }
    }
    Ok((model, log))
}
