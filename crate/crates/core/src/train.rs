use std::collections::{BTreeMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{average_params, Checkpoint};
use crate::corpus::ParallelCorpus;
use crate::error::{Error, Result};
use crate::model::{loss_and_grads, ModelConfig, ParamMap};
use crate::strategy::{prepare_example, PreparedExample, StrategySpec};
use crate::vocab::VocabSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_steps: usize,
    /// Upper bound on encoder+decoder tokens per batch (single oversized
    /// examples still form a batch of one).
    pub batch_tokens: usize,
    pub lr_peak: f64,
    pub warmup_steps: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub label_smoothing: f64,
    pub seed: u64,
    pub checkpoint_every: usize,
    /// The returned parameters are the mean of this many latest snapshots.
    pub average_last: usize,
}

impl TrainConfig {
    /// Defaults sized for minutes-long runs on one CPU core.
    pub fn desk() -> TrainConfig {
        TrainConfig {
            max_steps: 4000,
            batch_tokens: 512,
            lr_peak: 1e-3,
            warmup_steps: 400,
            adam_beta1: 0.9,
            adam_beta2: 0.98,
            adam_eps: 1e-9,
            label_smoothing: 0.1,
            seed: 1,
            checkpoint_every: 500,
            average_last: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps == 0 {
            return Err(Error::Config("warmup_steps must be at least 1".into()));
        }
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return Err(Error::Config(format!("lr_peak {} must be positive", self.lr_peak)));
        }
        if self.batch_tokens == 0 {
            return Err(Error::Config("batch_tokens must be positive".into()));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0,1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config("adam_eps must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0,1)",
                self.label_smoothing
            )));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint_every must be positive".into()));
        }
        if self.average_last == 0 {
            return Err(Error::Config("average_last must be positive".into()));
        }
        Ok(())
    }
}

/// Inverse-square-root schedule with linear warmup; both branches meet at
/// lr_peak when step == warmup.
pub fn learning_rate(cfg: &TrainConfig, step: usize) -> f64 {
    let s = step as f64;
    let w = cfg.warmup_steps as f64;
    if step <= cfg.warmup_steps {
        cfg.lr_peak * s / w
    } else {
        cfg.lr_peak * (w / s).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetric {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
    pub tokens: usize,
}

struct Adam {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

impl Adam {
    fn new(cfg: &TrainConfig) -> Adam {
        Adam {
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: 0,
            beta1: cfg.adam_beta1,
            beta2: cfg.adam_beta2,
            eps: cfg.adam_eps,
        }
    }

    fn step(&mut self, params: &mut ParamMap, grads: &BTreeMap<String, crate::tensor::Tensor>, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads[name].data();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
            let w = p.data_mut();
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                w[i] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Counter-mixed dropout seed per step: independent of batch composition.
fn step_dropout_seed(seed: u64, step: usize) -> u64 {
    (seed ^ (step as u64).wrapping_mul(0x9E3779B97F4A7C15)).wrapping_add(0x5851F42D4C957F2D)
}

/// Greedy token-budget batches over length-sorted examples. Composition is a
/// pure function of the example list; only batch order is shuffled per epoch.
fn build_batches(prepared: &[PreparedExample], batch_tokens: usize) -> Vec<Vec<usize>> {
    let cost = |ex: &PreparedExample| ex.enc_input_ids.len() + ex.dec_input_ids.len();
    let mut idx: Vec<usize> = (0..prepared.len()).collect();
    idx.sort_by_key(|&i| (cost(&prepared[i]), i));
    let mut batches = Vec::new();
    let mut cur: Vec<usize> = Vec::new();
    let mut cur_cost = 0usize;
    for i in idx {
        let c = cost(&prepared[i]);
        if !cur.is_empty() && cur_cost + c > batch_tokens {
            batches.push(std::mem::take(&mut cur));
            cur_cost = 0;
        }
        cur.push(i);
        cur_cost += c;
    }
    if !cur.is_empty() {
        batches.push(cur);
    }
    batches
}

fn run_loop(
    mut params: ParamMap,
    prepared: &[PreparedExample],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(ParamMap, Vec<StepMetric>)> {
    if tcfg.max_steps == 0 {
        return Ok((params, Vec::new()));
    }
    let batches = build_batches(prepared, tcfg.batch_tokens);
    let n_batches = batches.len();
    let mut order: Vec<usize> = (0..n_batches).collect();
    let mut adam = Adam::new(tcfg);
    let mut metrics = Vec::with_capacity(tcfg.max_steps);
    let mut ring: VecDeque<ParamMap> = VecDeque::with_capacity(tcfg.average_last);
    for step in 1..=tcfg.max_steps {
        let at = (step - 1) % n_batches;
        if at == 0 {
            let epoch = (step - 1) / n_batches;
            let mut rng = ChaCha8Rng::seed_from_u64(tcfg.seed ^ (epoch as u64).wrapping_mul(0xA076_1D64_78BD_642F));
            order.shuffle(&mut rng);
        }
        let batch: Vec<PreparedExample> = batches[order[at]]
            .iter()
            .map(|&i| prepared[i].clone())
            .collect();
        let out = loss_and_grads(&batch, &params, mcfg, step_dropout_seed(tcfg.seed, step)).map_err(|e| {
            match e {
                Error::NonFinite { .. } => Error::Divergence { step },
                other => other,
            }
        })?;
        if !out.loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        let lr = learning_rate(tcfg, step);
        adam.step(&mut params, &out.grads, lr);
        metrics.push(StepMetric {
            step,
            lr,
            loss: out.loss,
            tokens: batch.iter().map(|ex| ex.dec_target_ids.len()).sum(),
        });
        if step % tcfg.checkpoint_every == 0 || step == tcfg.max_steps {
            if ring.len() == tcfg.average_last {
                ring.pop_front();
            }
            ring.push_back(params.clone());
        }
    }
    let snapshots: Vec<ParamMap> = ring.into_iter().collect();
    let averaged = average_params(&snapshots)?;
    Ok((averaged, metrics))
}

fn prepare_corpus(
    corpus: &ParallelCorpus,
    vocab: &VocabSpec,
    spec: &StrategySpec,
) -> Result<Vec<PreparedExample>> {
    if corpus.examples.is_empty() {
        return Err(Error::Contract("training corpus is empty".into()));
    }
    corpus
        .examples
        .iter()
        .map(|ex| prepare_example(&ex.src, &ex.tgt, &ex.src_lang, &ex.tgt_lang, spec, vocab))
        .collect()
}

fn check_compat(spec: &StrategySpec, mcfg: &ModelConfig, vocab: &VocabSpec) -> Result<()> {
    if spec.enc_layers != mcfg.enc_layers {
        return Err(Error::Config(format!(
            "strategy built for {} encoder layers, model has {}",
            spec.enc_layers, mcfg.enc_layers
        )));
    }
    if vocab.vocab_size() > mcfg.vocab_size {
        return Err(Error::Config(format!(
            "vocabulary of {} does not fit model vocab of {}",
            vocab.vocab_size(),
            mcfg.vocab_size
        )));
    }
    Ok(())
}

/// Seeded training from fresh parameters. Returns the averaged checkpoint
/// and the per-step metric log.
pub fn train(
    corpus: &ParallelCorpus,
    vocab: &VocabSpec,
    spec: &StrategySpec,
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<StepMetric>)> {
    mcfg.validate()?;
    tcfg.validate()?;
    check_compat(spec, mcfg, vocab)?;
    let mut cfg = mcfg.clone();
    cfg.label_smoothing = tcfg.label_smoothing;
    let prepared = prepare_corpus(corpus, vocab, spec)?;
    let params = crate::model::init_params(&cfg, tcfg.seed)?;
    let (params, metrics) = run_loop(params, &prepared, &cfg, tcfg)?;
    Ok((Checkpoint::new(cfg, vocab.clone(), params)?, metrics))
}

/// Resume training from an existing checkpoint under a (possibly different)
/// strategy — the parameter set is strategy-independent, so nothing is
/// missing or unexpected.
pub fn finetune(
    ckpt: &Checkpoint,
    spec: &StrategySpec,
    corpus: &ParallelCorpus,
    tcfg: &TrainConfig,
) -> Result<(Checkpoint, Vec<StepMetric>)> {
    tcfg.validate()?;
    check_compat(spec, &ckpt.cfg, &ckpt.vocab)?;
    let mut cfg = ckpt.cfg.clone();
    cfg.label_smoothing = tcfg.label_smoothing;
    let prepared = prepare_corpus(corpus, &ckpt.vocab, spec)?;
    let (params, metrics) = run_loop(ckpt.params.clone(), &prepared, &cfg, tcfg)?;
    Ok((Checkpoint::new(cfg, ckpt.vocab.clone(), params)?, metrics))
}
