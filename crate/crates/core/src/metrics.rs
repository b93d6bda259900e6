use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{encode, ModelConfig, ParamMap};
use crate::strategy::{prepare_source, StrategySpec};
use crate::tensor::Tensor;
use crate::vocab::VocabSpec;

/// Detector verdict for token sequences with no majority language.
pub const UNKNOWN: &str = "unknown";

/// Language whose token range covers a strict majority of the content tokens
/// (specials and tag tokens don't count); `unknown` on tie, empty, or no
/// majority. Exact on rendered synthetic sentences because ranges are
/// disjoint.
pub fn detect_language<'a>(vocab: &'a VocabSpec, tokens: &[u32]) -> &'a str {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total = 0usize;
    for &t in tokens {
        if vocab.is_special(t) || vocab.is_tag(t) {
            continue;
        }
        total += 1;
        if let Some(code) = vocab.lang_of_token(t) {
            *counts.entry(code).or_insert(0) += 1;
        }
    }
    if total == 0 {
        return UNKNOWN;
    }
    let (&best, &n) = match counts.iter().max_by_key(|(_, &n)| n) {
        Some(kv) => kv,
        None => return UNKNOWN,
    };
    if 2 * n > total {
        best
    } else {
        UNKNOWN
    }
}

/// Where a detected language lands relative to a translation direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bucket {
    Acc,
    ToSrc,
    ToEn,
    ToOther,
}

fn bucket_of(detected: &str, src_lang: &str, tgt_lang: &str) -> Bucket {
    if detected == tgt_lang {
        Bucket::Acc
    } else if detected == src_lang {
        Bucket::ToSrc
    } else if detected == "en" {
        Bucket::ToEn
    } else {
        Bucket::ToOther
    }
}

/// Per-direction decomposition of detected hypothesis languages, in percent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LanguageRateReport {
    pub src_lang: String,
    pub tgt_lang: String,
    pub n: usize,
    pub acc: f64,
    pub to_src: f64,
    pub to_en: f64,
    pub to_other: f64,
}

impl LanguageRateReport {
    pub fn bucket_sum(&self) -> f64 {
        self.acc + self.to_src + self.to_en + self.to_other
    }
}

/// Rate reports per direction (first-appearance order) plus the macro
/// average across directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub per_direction: Vec<LanguageRateReport>,
    pub macro_avg: LanguageRateReport,
}

pub fn language_rates(
    vocab: &VocabSpec,
    hypotheses: &[Vec<u32>],
    directions: &[(String, String)],
) -> Result<RateSummary> {
    if hypotheses.is_empty() {
        return Err(Error::Contract("language rates over zero hypotheses".into()));
    }
    if hypotheses.len() != directions.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} directions",
            hypotheses.len(),
            directions.len()
        )));
    }
    let mut order: Vec<(String, String)> = Vec::new();
    let mut counts: BTreeMap<(String, String), [usize; 4]> = BTreeMap::new();
    for (hyp, dir) in hypotheses.iter().zip(directions) {
        let detected = detect_language(vocab, hyp);
        let bucket = bucket_of(detected, &dir.0, &dir.1);
        let entry = counts.entry(dir.clone()).or_insert_with(|| {
            order.push(dir.clone());
            [0; 4]
        });
        entry[bucket as usize] += 1;
    }
    let per_direction: Vec<LanguageRateReport> = order
        .iter()
        .map(|dir| {
            let c = counts[dir];
            let n: usize = c.iter().sum();
            let pct = |k: usize| 100.0 * c[k] as f64 / n as f64;
            LanguageRateReport {
                src_lang: dir.0.clone(),
                tgt_lang: dir.1.clone(),
                n,
                acc: pct(0),
                to_src: pct(1),
                to_en: pct(2),
                to_other: pct(3),
            }
        })
        .collect();
    let d = per_direction.len() as f64;
    let macro_avg = LanguageRateReport {
        src_lang: "*".into(),
        tgt_lang: "*".into(),
        n: hypotheses.len(),
        acc: per_direction.iter().map(|r| r.acc).sum::<f64>() / d,
        to_src: per_direction.iter().map(|r| r.to_src).sum::<f64>() / d,
        to_en: per_direction.iter().map(|r| r.to_en).sum::<f64>() / d,
        to_other: per_direction.iter().map(|r| r.to_other).sum::<f64>() / d,
    };
    Ok(RateSummary { per_direction, macro_avg })
}

/// Detection aggregated over fixed-size windows of content tokens, by window
/// index across the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalStat {
    pub interval: usize,
    pub n: usize,
    /// detected language (or "unknown") → percent of windows at this index
    pub rates: BTreeMap<String, f64>,
    pub acc: f64,
    pub to_src: f64,
    pub to_en: f64,
    pub to_other: f64,
}

/// Split content tokens into consecutive windows; a final partial window
/// keeps its own slot when it has at least ceil(window/2) tokens, otherwise
/// it merges into the previous window. A sentence shorter than half a window
/// still forms one window.
fn window_spans(len: usize, window: usize) -> Vec<(usize, usize)> {
    if len == 0 {
        return Vec::new();
    }
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    while start < len {
        let end = (start + window).min(len);
        spans.push((start, end));
        start = end;
    }
    if spans.len() > 1 {
        let (ls, le) = *spans.last().expect("non-empty spans");
        if le - ls < window.div_ceil(2) {
            spans.pop();
            spans.last_mut().expect("previous span exists").1 = le;
        }
    }
    spans
}

pub fn interval_rates(
    vocab: &VocabSpec,
    hypotheses: &[Vec<u32>],
    directions: &[(String, String)],
    window: usize,
) -> Result<Vec<IntervalStat>> {
    if window == 0 {
        return Err(Error::Config("interval window must be at least 1".into()));
    }
    if hypotheses.is_empty() {
        return Err(Error::Contract("interval rates over zero hypotheses".into()));
    }
    if hypotheses.len() != directions.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} directions",
            hypotheses.len(),
            directions.len()
        )));
    }
    struct Cell {
        n: usize,
        langs: BTreeMap<String, usize>,
        buckets: [usize; 4],
    }
    let mut cells: Vec<Cell> = Vec::new();
    for (hyp, dir) in hypotheses.iter().zip(directions) {
        let content: Vec<u32> = hyp
            .iter()
            .copied()
            .filter(|&t| !vocab.is_special(t) && !vocab.is_tag(t))
            .collect();
        for (i, &(s, e)) in window_spans(content.len(), window).iter().enumerate() {
            let detected = detect_language(vocab, &content[s..e]);
            let bucket = bucket_of(detected, &dir.0, &dir.1);
            while cells.len() <= i {
                cells.push(Cell { n: 0, langs: BTreeMap::new(), buckets: [0; 4] });
            }
            let cell = &mut cells[i];
            cell.n += 1;
            *cell.langs.entry(detected.to_string()).or_insert(0) += 1;
            cell.buckets[bucket as usize] += 1;
        }
    }
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let nf = c.n as f64;
            IntervalStat {
                interval: i,
                n: c.n,
                rates: c
                    .langs
                    .into_iter()
                    .map(|(k, v)| (k, 100.0 * v as f64 / nf))
                    .collect(),
                acc: 100.0 * c.buckets[0] as f64 / nf,
                to_src: 100.0 * c.buckets[1] as f64 / nf,
                to_en: 100.0 * c.buckets[2] as f64 / nf,
                to_other: 100.0 * c.buckets[3] as f64 / nf,
            }
        })
        .collect())
}

// ---- similarity ----

pub fn mean_pool(state: &Tensor) -> Vec<f64> {
    let (m, d) = (state.rows(), state.cols());
    let mut out = vec![0.0; d];
    for i in 0..m {
        for j in 0..d {
            out[j] += state.data()[i * d + j];
        }
    }
    for v in out.iter_mut() {
        *v /= m as f64;
    }
    out
}

/// None when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    // rounding can push |dot| past na*nb by an ulp; keep the mathematical range
    Some((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// A zero-shot sentence pair: x and y are translations of each other.
#[derive(Clone, Debug, PartialEq)]
pub struct SentencePair {
    pub x: Vec<u32>,
    pub x_lang: String,
    pub y: Vec<u32>,
    pub y_lang: String,
}

/// Mean cosine similarity per encoder layer between mean-pooled states of
/// paired sentences, each encoded as a source toward the other's language
/// under the given strategy. Zero-norm pooled vectors are excluded and
/// counted in `skipped`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityCurve {
    pub per_layer: Vec<(usize, f64)>,
    pub skipped: usize,
}

pub fn layer_similarity(
    pairs: &[SentencePair],
    spec: &StrategySpec,
    vocab: &VocabSpec,
    params: &ParamMap,
    cfg: &ModelConfig,
) -> Result<SimilarityCurve> {
    if pairs.is_empty() {
        return Err(Error::Contract("layer similarity over zero pairs".into()));
    }
    let mut sums = vec![0.0; cfg.enc_layers];
    let mut counts = vec![0usize; cfg.enc_layers];
    let mut skipped = 0usize;
    for pair in pairs {
        let (ex, px) = prepare_source(&pair.x, &pair.x_lang, &pair.y_lang, spec, vocab)?;
        let (ey, py) = prepare_source(&pair.y, &pair.y_lang, &pair.x_lang, spec, vocab)?;
        let tx = encode(&ex, &px, params, cfg)?;
        let ty = encode(&ey, &py, params, cfg)?;
        for l in 0..cfg.enc_layers {
            let a = mean_pool(&tx.states[l]);
            let b = mean_pool(&ty.states[l]);
            match cosine(&a, &b) {
                Some(c) => {
                    sums[l] += c;
                    counts[l] += 1;
                }
                None => skipped += 1,
            }
        }
    }
    let per_layer = sums
        .into_iter()
        .zip(&counts)
        .enumerate()
        .map(|(l, (s, &c))| {
            if c == 0 {
                Err(Error::Contract(format!(
                    "every pair excluded at layer {l} (zero-norm representations)"
                )))
            } else {
                Ok((l, s / c as f64))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityCurve { per_layer, skipped })
}

// ---- quality ----

fn ngram_counts(tokens: &[u32], n: usize) -> BTreeMap<&[u32], usize> {
    let mut map = BTreeMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *map.entry(w).or_insert(0) += 1;
        }
    }
    map
}

/// Corpus BLEU over token ids: geometric mean of modified n-gram precisions
/// times a brevity penalty. Orders no hypothesis is long enough for are
/// dropped; with smoothing on, zero-match orders get exponentially shrinking
/// credit (1/(2^k · denom)) instead of zeroing the score.
pub fn bleu_with(
    hypotheses: &[Vec<u32>],
    references: &[Vec<u32>],
    max_n: usize,
    smoothing: bool,
) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Contract("BLEU over an empty corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Contract("BLEU needs max_n >= 1".into()));
    }
    let mut numer = vec![0usize; max_n];
    let mut denom = vec![0usize; max_n];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    for (hyp, rf) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += rf.len();
        for n in 1..=max_n {
            if hyp.len() < n {
                continue;
            }
            denom[n - 1] += hyp.len() - n + 1;
            let refs = ngram_counts(rf, n);
            for (gram, count) in ngram_counts(hyp, n) {
                let clip = refs.get(gram).copied().unwrap_or(0);
                numer[n - 1] += count.min(clip);
            }
        }
    }
    if hyp_len == 0 {
        return Ok(0.0);
    }
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    let mut smooth = 1.0f64;
    for n in 0..max_n {
        if denom[n] == 0 {
            continue; // no hypothesis long enough: order drops out
        }
        orders += 1;
        let p = if numer[n] > 0 {
            numer[n] as f64 / denom[n] as f64
        } else if smoothing {
            smooth *= 2.0;
            1.0 / (smooth * denom[n] as f64)
        } else {
            return Ok(0.0);
        };
        log_sum += p.ln();
    }
    if orders == 0 {
        return Ok(0.0);
    }
    let precision = (log_sum / orders as f64).exp();
    let bp = if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    Ok(100.0 * precision * bp)
}

pub fn bleu(hypotheses: &[Vec<u32>], references: &[Vec<u32>], max_n: usize) -> Result<f64> {
    bleu_with(hypotheses, references, max_n, true)
}

/// Percentage of hypotheses exactly equal to their reference.
pub fn exact_match(hypotheses: &[Vec<u32>], references: &[Vec<u32>]) -> Result<f64> {
    if hypotheses.is_empty() {
        return Err(Error::Contract("exact match over an empty corpus".into()));
    }
    if hypotheses.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let hits = hypotheses.iter().zip(references).filter(|(h, r)| h == r).count();
    Ok(100.0 * hits as f64 / hypotheses.len() as f64)
}
