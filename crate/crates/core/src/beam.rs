use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::model::{decode_step, encode};
use crate::strategy::{decoder_start, prepare_source, StrategySpec};
use crate::vocab::EOS_ID;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub length_penalty: f64,
    /// Cap on generated tokens (the end marker counts toward it).
    pub max_decode_len: usize,
}

impl Default for DecodeConfig {
    fn default() -> DecodeConfig {
        DecodeConfig { beam_size: 5, length_penalty: 1.0, max_decode_len: 32 }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::Config("beam_size must be at least 1".into()));
        }
        if self.max_decode_len == 0 {
            return Err(Error::Config("max_decode_len must be at least 1".into()));
        }
        if !(self.length_penalty.is_finite() && self.length_penalty >= 0.0) {
            return Err(Error::Config(format!(
                "length_penalty {} must be a finite non-negative number",
                self.length_penalty
            )));
        }
        Ok(())
    }
}

/// One decoded hypothesis. `tokens` excludes both the start symbol and the
/// end marker; `finished` is false when the length cap cut decoding short.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decoded {
    pub tokens: Vec<u32>,
    pub score: f64,
    pub finished: bool,
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = logits.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln() + mx;
    logits.iter().map(|&x| x - lse).collect()
}

fn length_penalty(len: usize, alpha: f64) -> f64 {
    ((5.0 + len as f64) / 6.0).powf(alpha)
}

#[derive(Clone, Debug)]
struct Hyp {
    tokens: Vec<u32>,
    sum_logprob: f64,
    finished: bool,
}

impl Hyp {
    fn score(&self, alpha: f64) -> f64 {
        self.sum_logprob / length_penalty(self.tokens.len(), alpha)
    }
}

fn strip_eos(mut tokens: Vec<u32>, eos: u32) -> Vec<u32> {
    if tokens.last() == Some(&eos) {
        tokens.pop();
    }
    tokens
}

/// Beam search over an arbitrary next-token scorer. `step` receives the full
/// prefix (start symbol first) and returns unnormalized logits over the
/// vocabulary. Hypotheses are ranked by length-penalized summed log
/// probability; ties break toward the lexicographically smaller sequence.
pub fn beam_search<F>(
    step: &mut F,
    start: u32,
    eos: u32,
    vocab_size: usize,
    cfg: &DecodeConfig,
) -> Result<Decoded>
where
    F: FnMut(&[u32]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    if vocab_size == 0 {
        return Err(Error::Contract("beam search over an empty vocabulary".into()));
    }
    let alpha = cfg.length_penalty;
    let mut beams = vec![Hyp { tokens: Vec::new(), sum_logprob: 0.0, finished: false }];
    for _ in 0..cfg.max_decode_len {
        if beams.iter().all(|h| h.finished) {
            break;
        }
        let mut candidates: Vec<Hyp> = Vec::with_capacity(beams.len() * vocab_size);
        for hyp in &beams {
            if hyp.finished {
                candidates.push(hyp.clone());
                continue;
            }
            let mut prefix = Vec::with_capacity(hyp.tokens.len() + 1);
            prefix.push(start);
            prefix.extend_from_slice(&hyp.tokens);
            let logits = step(&prefix)?;
            if logits.len() != vocab_size {
                return Err(Error::Contract(format!(
                    "scorer returned {} logits for a vocabulary of {}",
                    logits.len(),
                    vocab_size
                )));
            }
            let logprobs = log_softmax(&logits);
            for (v, &lp) in logprobs.iter().enumerate() {
                let mut tokens = hyp.tokens.clone();
                tokens.push(v as u32);
                candidates.push(Hyp {
                    tokens,
                    sum_logprob: hyp.sum_logprob + lp,
                    finished: v as u32 == eos,
                });
            }
        }
        candidates.sort_by(|a, b| {
            b.score(alpha)
                .total_cmp(&a.score(alpha))
                .then_with(|| a.tokens.cmp(&b.tokens))
        });
        candidates.truncate(cfg.beam_size);
        beams = candidates;
    }
    let best = beams
        .into_iter()
        .max_by(|a, b| {
            a.score(alpha)
                .total_cmp(&b.score(alpha))
                .then_with(|| b.tokens.cmp(&a.tokens))
        })
        .expect("beam list is never empty");
    Ok(Decoded {
        score: best.score(alpha),
        finished: best.finished,
        tokens: strip_eos(best.tokens, eos),
    })
}

/// Stepwise argmax decoding under the same scorer contract as `beam_search`.
pub fn greedy_decode<F>(
    step: &mut F,
    start: u32,
    eos: u32,
    vocab_size: usize,
    cfg: &DecodeConfig,
) -> Result<Decoded>
where
    F: FnMut(&[u32]) -> Result<Vec<f64>>,
{
    cfg.validate()?;
    let mut hyp = Hyp { tokens: Vec::new(), sum_logprob: 0.0, finished: false };
    for _ in 0..cfg.max_decode_len {
        let mut prefix = Vec::with_capacity(hyp.tokens.len() + 1);
        prefix.push(start);
        prefix.extend_from_slice(&hyp.tokens);
        let logits = step(&prefix)?;
        if logits.len() != vocab_size {
            return Err(Error::Contract(format!(
                "scorer returned {} logits for a vocabulary of {}",
                logits.len(),
                vocab_size
            )));
        }
        let logprobs = log_softmax(&logits);
        let (v, lp) = logprobs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.cmp(&a.0)))
            .expect("vocabulary is non-empty");
        hyp.tokens.push(v as u32);
        hyp.sum_logprob += lp;
        if v as u32 == eos {
            hyp.finished = true;
            break;
        }
    }
    Ok(Decoded {
        score: hyp.score(cfg.length_penalty),
        finished: hyp.finished,
        tokens: strip_eos(hyp.tokens, eos),
    })
}

/// Translate one source sentence with a trained checkpoint: tag the source
/// under the strategy, encode once, then beam-decode from the strategy's
/// start symbol.
pub fn translate(
    ckpt: &Checkpoint,
    src_tokens: &[u32],
    src_lang: &str,
    tgt_lang: &str,
    spec: &StrategySpec,
    dcfg: &DecodeConfig,
) -> Result<Decoded> {
    dcfg.validate()?;
    let (enc_ids, plan) = prepare_source(src_tokens, src_lang, tgt_lang, spec, &ckpt.vocab)?;
    let trace = encode(&enc_ids, &plan, &ckpt.params, &ckpt.cfg)?;
    let enc_final = trace.final_state();
    let start = decoder_start(spec, &ckpt.vocab, src_lang, tgt_lang)?;
    // decode_step rejects prefixes past the model's positional range; stop
    // one short so the start symbol always fits.
    let cap = dcfg.max_decode_len.min(ckpt.cfg.max_len - 1);
    let effective = DecodeConfig { max_decode_len: cap, ..dcfg.clone() };
    let mut step = |prefix: &[u32]| decode_step(enc_final, prefix, &ckpt.params, &ckpt.cfg);
    beam_search(&mut step, start, EOS_ID, ckpt.cfg.vocab_size, &effective)
}
