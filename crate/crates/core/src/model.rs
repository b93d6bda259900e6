use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::strategy::{InjectionPlan, PreparedExample};
use crate::tape::{Tape, ValId};
use crate::tensor::Tensor;

pub type ParamMap = BTreeMap<String, Tensor>;

pub const LN_EPS: f64 = 1e-5;
const NEG_FILL: f64 = -1e30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub label_smoothing: f64,
    pub post_norm: bool,
}

impl ModelConfig {
    /// Small defaults that train in minutes on one CPU core.
    pub fn desk(vocab_size: usize) -> ModelConfig {
        ModelConfig {
            enc_layers: 2,
            dec_layers: 2,
            d_model: 64,
            n_heads: 4,
            d_ff: 128,
            vocab_size,
            max_len: 64,
            dropout: 0.0,
            label_smoothing: 0.1,
            post_norm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::Config("encoder and decoder need at least one layer".into()));
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.d_ff == 0 {
            return Err(Error::Config("d_ff must be positive".into()));
        }
        if self.vocab_size < 4 {
            return Err(Error::Config(format!(
                "vocabulary of {} leaves no room for specials and content",
                self.vocab_size
            )));
        }
        if self.max_len < 2 {
            return Err(Error::Config("max_len must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::Config(format!(
                "label smoothing {} outside [0,1)",
                self.label_smoothing
            )));
        }
        if !self.post_norm {
            return Err(Error::Config("only the post-norm sublayer order is supported".into()));
        }
        Ok(())
    }
}

// ---- parameter inventory ----

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ParamKind {
    Embed,
    Linear { fan_in: usize, fan_out: usize },
    Ones,
    Zeros,
}

/// Names, shapes, and init kinds for every parameter, in a fixed order that
/// depends only on the config — never on the strategy.
fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, ParamKind)> {
    let d = cfg.d_model;
    let ff = cfg.d_ff;
    let mut out = Vec::new();
    out.push(("embed.weight".to_string(), vec![cfg.vocab_size, d], ParamKind::Embed));
    let attn = |prefix: &str, out: &mut Vec<(String, Vec<usize>, ParamKind)>| {
        for w in ["wq", "wk", "wv", "wo"] {
            out.push((format!("{prefix}.{w}"), vec![d, d], ParamKind::Linear { fan_in: d, fan_out: d }));
        }
        // no key bias: softmax subtracts any per-query constant, so a key
        // bias has identically zero gradient and no effect on the function
        for b in ["bq", "bv", "bo"] {
            out.push((format!("{prefix}.{b}"), vec![d], ParamKind::Zeros));
        }
    };
    let ln = |prefix: &str, out: &mut Vec<(String, Vec<usize>, ParamKind)>| {
        out.push((format!("{prefix}.gain"), vec![d], ParamKind::Ones));
        out.push((format!("{prefix}.bias"), vec![d], ParamKind::Zeros));
    };
    let ffn = |prefix: &str, out: &mut Vec<(String, Vec<usize>, ParamKind)>| {
        out.push((format!("{prefix}.w1"), vec![d, ff], ParamKind::Linear { fan_in: d, fan_out: ff }));
        out.push((format!("{prefix}.b1"), vec![ff], ParamKind::Zeros));
        out.push((format!("{prefix}.w2"), vec![ff, d], ParamKind::Linear { fan_in: ff, fan_out: d }));
        out.push((format!("{prefix}.b2"), vec![d], ParamKind::Zeros));
    };
    for l in 0..cfg.enc_layers {
        attn(&format!("enc.{l}.attn"), &mut out);
        ln(&format!("enc.{l}.ln1"), &mut out);
        ffn(&format!("enc.{l}.ffn"), &mut out);
        ln(&format!("enc.{l}.ln2"), &mut out);
    }
    for l in 0..cfg.dec_layers {
        attn(&format!("dec.{l}.self"), &mut out);
        ln(&format!("dec.{l}.ln1"), &mut out);
        attn(&format!("dec.{l}.cross"), &mut out);
        ln(&format!("dec.{l}.ln2"), &mut out);
        ffn(&format!("dec.{l}.ffn"), &mut out);
        ln(&format!("dec.{l}.ln3"), &mut out);
    }
    out
}

/// The (name, shape) inventory; identical for every strategy.
pub fn param_inventory(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    param_specs(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

/// Seeded init: embeddings U(±1/√d), linears Xavier-uniform, norms identity.
/// Draw order is the fixed inventory order, so results are reproducible.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamMap> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut map = ParamMap::new();
    for (name, shape, kind) in param_specs(cfg) {
        let n: usize = shape.iter().product();
        let data = match kind {
            ParamKind::Embed => {
                let b = 1.0 / (cfg.d_model as f64).sqrt();
                (0..n).map(|_| rng.random_range(-b..b)).collect()
            }
            ParamKind::Linear { fan_in, fan_out } => {
                let b = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-b..b)).collect()
            }
            ParamKind::Ones => vec![1.0; n],
            ParamKind::Zeros => vec![0.0; n],
        };
        map.insert(name, Tensor::new(shape, data)?.with_grad());
    }
    Ok(map)
}

/// Check a parameter map against the config's inventory.
pub fn check_params(params: &ParamMap, cfg: &ModelConfig) -> Result<()> {
    let specs = param_specs(cfg);
    if params.len() != specs.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, got {}",
            specs.len(),
            params.len()
        )));
    }
    for (name, shape, _) in &specs {
        let t = params
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if t.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                t.shape(),
                shape
            )));
        }
    }
    Ok(())
}

// ---- binding parameters onto a tape ----

pub(crate) struct Bound {
    ids: BTreeMap<String, ValId>,
}

impl Bound {
    fn get(&self, name: &str) -> Result<ValId> {
        self.ids
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("unbound parameter {name}")))
    }
}

/// Put every parameter on the tape: registered (differentiable) when
/// trainable, plain leaves otherwise.
pub(crate) fn bind(tape: &mut Tape, params: &ParamMap, cfg: &ModelConfig, trainable: bool) -> Result<Bound> {
    check_params(params, cfg)?;
    let mut ids = BTreeMap::new();
    for (name, t) in params {
        let id = if trainable {
            tape.register_param(name, t)?
        } else {
            tape.leaf(t.rows(), t.cols(), t.data().to_vec())?
        };
        ids.insert(name.clone(), id);
    }
    Ok(Bound { ids })
}

// ---- dropout context ----

/// Per-forward dropout state: each call site gets a fresh salt so masks are
/// independent but reproducible from (seed, call order).
pub(crate) struct DropCtx {
    rate: f64,
    seed: u64,
    next_salt: u64,
}

impl DropCtx {
    pub(crate) fn new(rate: f64, seed: u64) -> DropCtx {
        DropCtx { rate, seed, next_salt: 0 }
    }

    pub(crate) fn off() -> DropCtx {
        DropCtx::new(0.0, 0)
    }

    fn apply(&mut self, tape: &mut Tape, x: ValId) -> Result<ValId> {
        let salt = self.next_salt;
        self.next_salt += 1;
        tape.dropout(x, self.rate, self.seed, salt)
    }
}

// ---- building blocks ----

fn linear(tape: &mut Tape, x: ValId, w: ValId, b: ValId) -> Result<ValId> {
    let xw = tape.matmul(x, w)?;
    tape.add_row(xw, b)
}

/// Sinusoidal position rows [len, d] as a constant leaf.
fn position_rows(tape: &mut Tape, len: usize, d: usize) -> Result<ValId> {
    let mut pe = vec![0.0; len * d];
    for pos in 0..len {
        let mut i = 0;
        while 2 * i < d {
            let theta = pos as f64 / 10000f64.powf(2.0 * i as f64 / d as f64);
            pe[pos * d + 2 * i] = theta.sin();
            if 2 * i + 1 < d {
                pe[pos * d + 2 * i + 1] = theta.cos();
            }
            i += 1;
        }
    }
    tape.leaf(len, d, pe)
}

/// Scaled embedding lookup plus positions: the layer-0 input stream.
fn embed_stream(tape: &mut Tape, bound: &Bound, ids: &[u32], cfg: &ModelConfig) -> Result<ValId> {
    let table = bound.get("embed.weight")?;
    let e = tape.embedding(table, ids)?;
    let scaled = tape.scale(e, (cfg.d_model as f64).sqrt())?;
    let pos = position_rows(tape, ids.len(), cfg.d_model)?;
    tape.add(scaled, pos)
}

/// One scaled embedding row (no positions): the e^t of converter injection
/// and the value used by restore/replace plan steps.
fn tag_embedding_row(tape: &mut Tape, bound: &Bound, id: u32, cfg: &ModelConfig) -> Result<ValId> {
    let table = bound.get("embed.weight")?;
    let e = tape.embedding(table, &[id])?;
    tape.scale(e, (cfg.d_model as f64).sqrt())
}

/// Blocked-position mask for one attention call; `true` blocks a (query, key)
/// pair. Returns None when nothing is blocked.
fn causal_mask(n: usize) -> Vec<bool> {
    let mut m = vec![false; n * n];
    for i in 0..n {
        for j in i + 1..n {
            m[i * n + j] = true;
        }
    }
    m
}

/// Exclude one position as key and as query.
fn tag_exclusion_mask(n: usize, pos: usize) -> Vec<bool> {
    let mut m = vec![false; n * n];
    for j in 0..n {
        m[pos * n + j] = true; // tag attends to nothing
        m[j * n + pos] = true; // nothing attends to the tag
    }
    m
}

/// Multi-head attention with the two-stage mask discipline: blocked scores
/// take a large negative fill before softmax; query rows that are fully
/// blocked have their weights zeroed after softmax so they emit a zero
/// context instead of a uniform one.
fn mha(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    q_in: ValId,
    kv_in: ValId,
    cfg: &ModelConfig,
    mask: Option<&[bool]>,
) -> Result<ValId> {
    let (nq, _) = tape.dims(q_in);
    let (nk, _) = tape.dims(kv_in);
    let q = linear(tape, q_in, bound.get(&format!("{prefix}.wq"))?, bound.get(&format!("{prefix}.bq"))?)?;
    let k = tape.matmul(kv_in, bound.get(&format!("{prefix}.wk"))?)?;
    let v = linear(tape, kv_in, bound.get(&format!("{prefix}.wv"))?, bound.get(&format!("{prefix}.bv"))?)?;

    let dead_rows: Option<Vec<bool>> = mask.map(|m| {
        debug_assert_eq!(m.len(), nq * nk);
        (0..nq)
            .map(|i| m[i * nk..(i + 1) * nk].iter().all(|&b| b))
            .collect()
    });
    let dead_mask: Option<Vec<bool>> = dead_rows.and_then(|rows| {
        if rows.iter().any(|&b| b) {
            let mut full = vec![false; nq * nk];
            for (i, &dead) in rows.iter().enumerate() {
                if dead {
                    full[i * nk..(i + 1) * nk].fill(true);
                }
            }
            Some(full)
        } else {
            None
        }
    });

    let dh = cfg.d_model / cfg.n_heads;
    let inv = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = tape.slice_cols(q, lo, hi)?;
        let kh = tape.slice_cols(k, lo, hi)?;
        let vh = tape.slice_cols(v, lo, hi)?;
        let scores = tape.matmul_tb(qh, kh)?;
        let mut scores = tape.scale(scores, inv)?;
        if let Some(m) = mask {
            scores = tape.masked_fill(scores, m, NEG_FILL)?;
        }
        let mut probs = tape.softmax_rows(scores)?;
        if let Some(dm) = &dead_mask {
            probs = tape.masked_fill(probs, dm, 0.0)?;
        }
        heads.push(tape.matmul(probs, vh)?);
    }
    let ctx = tape.concat_cols(&heads)?;
    linear(tape, ctx, bound.get(&format!("{prefix}.wo"))?, bound.get(&format!("{prefix}.bo"))?)
}

fn feed_forward(tape: &mut Tape, bound: &Bound, prefix: &str, x: ValId) -> Result<ValId> {
    let h = linear(tape, x, bound.get(&format!("{prefix}.w1"))?, bound.get(&format!("{prefix}.b1"))?)?;
    let h = tape.relu(h)?;
    linear(tape, h, bound.get(&format!("{prefix}.w2"))?, bound.get(&format!("{prefix}.b2"))?)
}

fn post_norm(tape: &mut Tape, bound: &Bound, prefix: &str, residual: ValId, sub: ValId) -> Result<ValId> {
    let s = tape.add(residual, sub)?;
    tape.layer_norm(
        s,
        bound.get(&format!("{prefix}.gain"))?,
        bound.get(&format!("{prefix}.bias"))?,
        LN_EPS,
    )
}

// ---- encoder ----

fn check_plan(plan: &InjectionPlan, seq_len: usize, cfg: &ModelConfig) -> Result<()> {
    let layer_ok = |l: usize| l < cfg.enc_layers;
    if let Some(&l) = plan.converter_layers.iter().find(|&&l| !layer_ok(l)) {
        return Err(Error::Contract(format!("converter layer {l} outside encoder of {}", cfg.enc_layers)));
    }
    if let Some(&l) = plan.mask_schedule.iter().find(|&&l| !layer_ok(l)) {
        return Err(Error::Contract(format!("masked layer {l} outside encoder of {}", cfg.enc_layers)));
    }
    if !plan.mask_schedule.is_empty() && plan.mask_position >= seq_len {
        return Err(Error::Contract(format!(
            "plan masks position {} of a {seq_len}-token input",
            plan.mask_position
        )));
    }
    for (what, step) in [("restore", plan.restore), ("replacement", plan.replace_at)] {
        if let Some((l, pos, _)) = step {
            if !layer_ok(l) {
                return Err(Error::Contract(format!("{what} layer {l} outside encoder of {}", cfg.enc_layers)));
            }
            if pos >= seq_len {
                return Err(Error::Contract(format!("plan {what} at position {pos} of a {seq_len}-token input")));
            }
        }
    }
    Ok(())
}

/// Encoder stack on an existing tape; returns one output state per layer.
pub(crate) fn encode_on(
    tape: &mut Tape,
    bound: &Bound,
    ids: &[u32],
    plan: &InjectionPlan,
    cfg: &ModelConfig,
    drop: &mut DropCtx,
) -> Result<Vec<ValId>> {
    if ids.is_empty() {
        return Err(Error::Contract("encoder input is empty".into()));
    }
    if ids.len() > cfg.max_len {
        return Err(Error::Length { len: ids.len(), max: cfg.max_len });
    }
    check_plan(plan, ids.len(), cfg)?;

    let n = ids.len();
    let mut x = embed_stream(tape, bound, ids, cfg)?;
    x = drop.apply(tape, x)?;
    let mut states = Vec::with_capacity(cfg.enc_layers);
    for l in 0..cfg.enc_layers {
        if let Some((layer, pos, id)) = plan.replace_at {
            if layer == l {
                let row = tag_embedding_row(tape, bound, id, cfg)?;
                x = tape.replace_row_at(x, row, pos)?;
            }
        }
        if let Some((layer, pos, id)) = plan.restore {
            if layer == l {
                let row = tag_embedding_row(tape, bound, id, cfg)?;
                x = tape.add_row_at(x, row, pos)?;
            }
        }
        let h = if plan.converter_layers.contains(&l) {
            match plan.injected_embedding_id {
                Some(id) => {
                    let e_t = tag_embedding_row(tape, bound, id, cfg)?;
                    tape.add_row(x, e_t)?
                }
                None => x,
            }
        } else {
            x
        };
        let mask = if plan.mask_schedule.contains(&l) {
            Some(tag_exclusion_mask(n, plan.mask_position))
        } else {
            None
        };
        let prefix = format!("enc.{l}");
        let attn = mha(tape, bound, &format!("{prefix}.attn"), h, h, cfg, mask.as_deref())?;
        let attn = drop.apply(tape, attn)?;
        let s = post_norm(tape, bound, &format!("{prefix}.ln1"), h, attn)?;
        let f = feed_forward(tape, bound, &format!("{prefix}.ffn"), s)?;
        let f = drop.apply(tape, f)?;
        x = post_norm(tape, bound, &format!("{prefix}.ln2"), s, f)?;
        states.push(x);
    }
    Ok(states)
}

/// Per-layer encoder output states; the last entry feeds the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderTrace {
    pub states: Vec<Tensor>,
}

impl EncoderTrace {
    pub fn final_state(&self) -> &Tensor {
        self.states.last().expect("encoder has at least one layer")
    }
}

pub fn encode(
    enc_input_ids: &[u32],
    plan: &InjectionPlan,
    params: &ParamMap,
    cfg: &ModelConfig,
) -> Result<EncoderTrace> {
    cfg.validate()?;
    let mut tape = Tape::eval_only();
    let bound = bind(&mut tape, params, cfg, false)?;
    let states = encode_on(&mut tape, &bound, enc_input_ids, plan, cfg, &mut DropCtx::off())?;
    Ok(EncoderTrace {
        states: states.into_iter().map(|id| tape.to_tensor(id)).collect(),
    })
}

// ---- decoder ----

/// Decoder stack on an existing tape; returns final states [prefix_len, d].
pub(crate) fn decode_on(
    tape: &mut Tape,
    bound: &Bound,
    enc_final: ValId,
    dec_ids: &[u32],
    cfg: &ModelConfig,
    drop: &mut DropCtx,
) -> Result<ValId> {
    if dec_ids.is_empty() {
        return Err(Error::Contract("decoder prefix is empty".into()));
    }
    if dec_ids.len() > cfg.max_len {
        return Err(Error::Length { len: dec_ids.len(), max: cfg.max_len });
    }
    let n = dec_ids.len();
    let causal = causal_mask(n);
    let mut y = embed_stream(tape, bound, dec_ids, cfg)?;
    y = drop.apply(tape, y)?;
    for l in 0..cfg.dec_layers {
        let prefix = format!("dec.{l}");
        let a = mha(tape, bound, &format!("{prefix}.self"), y, y, cfg, Some(&causal))?;
        let a = drop.apply(tape, a)?;
        let s1 = post_norm(tape, bound, &format!("{prefix}.ln1"), y, a)?;
        let c = mha(tape, bound, &format!("{prefix}.cross"), s1, enc_final, cfg, None)?;
        let c = drop.apply(tape, c)?;
        let s2 = post_norm(tape, bound, &format!("{prefix}.ln2"), s1, c)?;
        let f = feed_forward(tape, bound, &format!("{prefix}.ffn"), s2)?;
        let f = drop.apply(tape, f)?;
        y = post_norm(tape, bound, &format!("{prefix}.ln3"), s2, f)?;
    }
    Ok(y)
}

/// Output logits: decoder states against the shared embedding table.
pub(crate) fn logits_on(tape: &mut Tape, bound: &Bound, states: ValId) -> Result<ValId> {
    let table = bound.get("embed.weight")?;
    tape.matmul_tb(states, table)
}

/// Next-token logits for the last prefix position.
pub fn decode_step(
    enc_final: &Tensor,
    dec_prefix_ids: &[u32],
    params: &ParamMap,
    cfg: &ModelConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut tape = Tape::eval_only();
    let bound = bind(&mut tape, params, cfg, false)?;
    let enc = tape.leaf(enc_final.rows(), enc_final.cols(), enc_final.data().to_vec())?;
    let states = decode_on(&mut tape, &bound, enc, dec_prefix_ids, cfg, &mut DropCtx::off())?;
    let (m, _) = tape.dims(states);
    let last = tape.slice_rows(states, m - 1, m)?;
    let logits = logits_on(&mut tape, &bound, last)?;
    Ok(tape.value(logits).to_vec())
}

// ---- loss ----

/// Summed smoothed cross-entropy and token count for a batch, built on an
/// existing tape (training path).
pub(crate) fn batch_loss_on(
    tape: &mut Tape,
    bound: &Bound,
    batch: &[PreparedExample],
    cfg: &ModelConfig,
    drop: &mut DropCtx,
) -> Result<(ValId, usize)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let mut total: Option<ValId> = None;
    let mut tokens = 0usize;
    for ex in batch {
        if ex.dec_target_ids.is_empty() {
            return Err(Error::Contract("example with no target tokens".into()));
        }
        let enc_states = encode_on(tape, bound, &ex.enc_input_ids, &ex.plan, cfg, drop)?;
        let enc_final = *enc_states.last().expect("at least one encoder layer");
        let states = decode_on(tape, bound, enc_final, &ex.dec_input_ids, cfg, drop)?;
        let logits = logits_on(tape, bound, states)?;
        let ce = tape.ce_label_smoothed(logits, &ex.dec_target_ids, cfg.label_smoothing)?;
        tokens += ex.dec_target_ids.len();
        total = Some(match total {
            Some(t) => tape.add(t, ce)?,
            None => ce,
        });
    }
    let sum = total.expect("non-empty batch");
    let loss = tape.scale(sum, 1.0 / tokens as f64)?;
    Ok((loss, tokens))
}

/// Mean over target tokens of label-smoothed negative log-likelihood.
pub fn forward_loss(batch: &[PreparedExample], params: &ParamMap, cfg: &ModelConfig) -> Result<f64> {
    cfg.validate()?;
    let mut tape = Tape::eval_only();
    let bound = bind(&mut tape, params, cfg, false)?;
    let (loss, _) = batch_loss_on(&mut tape, &bound, batch, cfg, &mut DropCtx::off())?;
    Ok(tape.scalar_value(loss))
}

/// Loss and parameter gradients for one batch (one optimizer step's worth).
pub fn loss_and_grads(
    batch: &[PreparedExample],
    params: &ParamMap,
    cfg: &ModelConfig,
    dropout_seed: u64,
) -> Result<crate::gradcheck::LossAndGrads> {
    cfg.validate()?;
    let mut tape = Tape::new();
    let bound = bind(&mut tape, params, cfg, true)?;
    let mut drop = DropCtx::new(cfg.dropout, dropout_seed);
    let (loss, _) = batch_loss_on(&mut tape, &bound, batch, cfg, &mut drop)?;
    let loss_value = tape.scalar_value(loss);
    if !loss_value.is_finite() {
        return Err(Error::NonFinite { op: "forward-loss" });
    }
    let grads = tape.backward(loss)?;
    Ok(crate::gradcheck::LossAndGrads { loss: loss_value, grads })
}

/// Teacher-forced logits at every prefix position: [target_len, vocab].
pub fn teacher_forced_logits(ex: &PreparedExample, params: &ParamMap, cfg: &ModelConfig) -> Result<Tensor> {
    cfg.validate()?;
    let mut tape = Tape::eval_only();
    let bound = bind(&mut tape, params, cfg, false)?;
    let mut drop = DropCtx::off();
    let enc_states = encode_on(&mut tape, &bound, &ex.enc_input_ids, &ex.plan, cfg, &mut drop)?;
    let enc_final = *enc_states.last().expect("at least one encoder layer");
    let states = decode_on(&mut tape, &bound, enc_final, &ex.dec_input_ids, cfg, &mut drop)?;
    let logits = logits_on(&mut tape, &bound, states)?;
    Ok(tape.to_tensor(logits))
}
