use std::collections::HashSet;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::{default_codes, VocabSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
    pub src_lang: String,
    pub tgt_lang: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Split {
    Train,
    Valid,
    TestSupervised,
    TestZeroshot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelCorpus {
    pub examples: Vec<Example>,
    pub split: Split,
    pub noise_rate_applied: f64,
}

/// One corrupted training pair: which example, and which wrong language its
/// target side was re-rendered in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseRecord {
    pub index: usize,
    pub wrong_lang: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusConfig {
    pub n_langs: usize,
    pub grammar_size: u32,
    pub train_pairs_per_direction: usize,
    pub valid_pairs_per_direction: usize,
    pub test_pairs_per_direction: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_langs: 4,
            grammar_size: 200,
            train_pairs_per_direction: 8000,
            valid_pairs_per_direction: 200,
            test_pairs_per_direction: 500,
            min_len: 5,
            max_len: 15,
            seed: 1,
        }
    }
}

impl CorpusConfig {
    fn validate(&self) -> Result<()> {
        if self.n_langs < 3 {
            return Err(Error::Config(
                "need at least 3 languages for zero-shot directions".into(),
            ));
        }
        if self.min_len < 3 || self.min_len > self.max_len {
            return Err(Error::Config(format!(
                "length range [{}, {}] invalid (minimum sentence length is 3)",
                self.min_len, self.max_len
            )));
        }
        if self.train_pairs_per_direction == 0 {
            return Err(Error::Config("train pairs per direction must be positive".into()));
        }
        Ok(())
    }
}

/// Everything gen-data produces, in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSet {
    pub vocab: VocabSpec,
    pub train: ParallelCorpus,
    pub valid: ParallelCorpus,
    pub test_sup: ParallelCorpus,
    pub test_zero: ParallelCorpus,
    pub noise_log: Vec<NoiseRecord>,
}

/// Ordered supervised directions: (en, X) and (X, en) for each X ≠ en.
pub fn supervised_directions(codes: &[String]) -> Vec<(String, String)> {
    let mut dirs = Vec::new();
    for c in codes.iter().filter(|c| *c != "en") {
        dirs.push(("en".to_string(), c.clone()));
        dirs.push((c.clone(), "en".to_string()));
    }
    dirs
}

/// Ordered zero-shot directions: (X, Y) for X ≠ Y, both ≠ en.
pub fn zeroshot_directions(codes: &[String]) -> Vec<(String, String)> {
    let non_en: Vec<&String> = codes.iter().filter(|c| *c != "en").collect();
    let mut dirs = Vec::new();
    for x in &non_en {
        for y in &non_en {
            if x != y {
                dirs.push((x.to_string(), y.to_string()));
            }
        }
    }
    dirs
}

/// Seeded concept-sequence sampler: `n` sequences with lengths uniform in the
/// inclusive range, each id uniform over the grammar. Duplicates possible.
pub fn generate_concepts(
    grammar_size: u32,
    length_range: (usize, usize),
    n: usize,
    seed: u64,
) -> Result<Vec<Vec<u32>>> {
    let (lo, hi) = length_range;
    if grammar_size == 0 {
        return Err(Error::Config("grammar size must be positive".into()));
    }
    if lo < 3 || lo > hi {
        return Err(Error::Config(format!(
            "length range [{lo}, {hi}] invalid (minimum sentence length is 3)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| sample_seq(&mut rng, grammar_size, lo, hi)).collect())
}

fn sample_seq(rng: &mut ChaCha8Rng, grammar: u32, lo: usize, hi: usize) -> Vec<u32> {
    let len = rng.random_range(lo..=hi);
    (0..len).map(|_| rng.random_range(0..grammar)).collect()
}

// Unique concept sequences, so train and test splits can never share one.
fn unique_concepts(rng: &mut ChaCha8Rng, grammar: u32, lo: usize, hi: usize, n: usize) -> Vec<Vec<u32>> {
    let mut seen: HashSet<Vec<u32>> = HashSet::with_capacity(n * 2);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let s = sample_seq(rng, grammar, lo, hi);
        if seen.insert(s.clone()) {
            out.push(s);
        }
    }
    out
}

/// Build the full English-centric corpus: train/valid/test-supervised over
/// en↔X directions, test-zeroshot over X↔Y (no en). Concept sequences are
/// globally unique, so no sentence leaks between splits, and each zero-shot
/// pair is two renderings of one shared concept sequence.
pub fn build_corpus(cfg: &CorpusConfig) -> Result<CorpusSet> {
    cfg.validate()?;
    let codes = default_codes(cfg.n_langs)?;
    let vocab = VocabSpec::build(&codes, cfg.grammar_size, cfg.seed)?;
    let sup = supervised_directions(&codes);
    let zero = zeroshot_directions(&codes);

    let per_sup = cfg.train_pairs_per_direction + cfg.valid_pairs_per_direction + cfg.test_pairs_per_direction;
    let total = sup.len() * per_sup + zero.len() * cfg.test_pairs_per_direction;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0xA24B_AED4_963E_E407));
    let pool = unique_concepts(&mut rng, cfg.grammar_size, cfg.min_len, cfg.max_len, total);
    let mut cursor = 0usize;
    let mut take = |n: usize| {
        let s = &pool[cursor..cursor + n];
        cursor += n;
        s
    };

    let render_pair = |concepts: &Vec<u32>, d: &(String, String)| -> Result<Example> {
        Ok(Example {
            src: vocab.lang(&d.0)?.render(concepts)?,
            tgt: vocab.lang(&d.1)?.render(concepts)?,
            src_lang: d.0.clone(),
            tgt_lang: d.1.clone(),
        })
    };

    let mut train = Vec::new();
    let mut valid = Vec::new();
    let mut test_sup = Vec::new();
    for d in &sup {
        for c in take(cfg.train_pairs_per_direction) {
            train.push(render_pair(c, d)?);
        }
        for c in take(cfg.valid_pairs_per_direction) {
            valid.push(render_pair(c, d)?);
        }
        for c in take(cfg.test_pairs_per_direction) {
            test_sup.push(render_pair(c, d)?);
        }
    }
    let mut test_zero = Vec::new();
    for d in &zero {
        for c in take(cfg.test_pairs_per_direction) {
            test_zero.push(render_pair(c, d)?);
        }
    }

    let mk = |examples, split| ParallelCorpus {
        examples,
        split,
        noise_rate_applied: 0.0,
    };
    Ok(CorpusSet {
        vocab,
        train: mk(train, Split::Train),
        valid: mk(valid, Split::Valid),
        test_sup: mk(test_sup, Split::TestSupervised),
        test_zero: mk(test_zero, Split::TestZeroshot),
        noise_log: Vec::new(),
    })
}

/// Corrupt a seeded fraction of pairs: the target side is re-rendered in a
/// wrong language — half the time the source language itself (copy-style
/// noise), half the time some third language. Labels are left intact; that is
/// the point.
pub fn inject_noise(
    corpus: &ParallelCorpus,
    vocab: &VocabSpec,
    wrong_target_rate: f64,
    seed: u64,
) -> Result<(ParallelCorpus, Vec<NoiseRecord>)> {
    if !(0.0..1.0).contains(&wrong_target_rate) {
        return Err(Error::Config(format!(
            "wrong-target rate {wrong_target_rate} outside [0, 1)"
        )));
    }
    let codes = vocab.codes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xD6E8_FEB8_6659_FD93).wrapping_add(1));
    let mut out = corpus.clone();
    let mut log = Vec::new();
    for (i, ex) in out.examples.iter_mut().enumerate() {
        let u: f64 = rng.random();
        if u >= wrong_target_rate {
            continue;
        }
        let wrong = if rng.random::<f64>() < 0.5 {
            ex.src_lang.clone()
        } else {
            let third: Vec<&String> = codes
                .iter()
                .filter(|c| **c != ex.src_lang && **c != ex.tgt_lang)
                .collect();
            third[rng.random_range(0..third.len())].clone()
        };
        let concepts = vocab.lang(&ex.src_lang)?.unrender(&ex.src)?;
        ex.tgt = vocab.lang(&wrong)?.render(&concepts)?;
        log.push(NoiseRecord { index: i, wrong_lang: wrong });
    }
    out.noise_rate_applied = wrong_target_rate;
    Ok((out, log))
}

/// Keep only pairs whose target side detects as the labeled target language.
/// With the exact detector this recovers precisely the uncorrupted subset.
pub fn denoise_filter(corpus: &ParallelCorpus, vocab: &VocabSpec) -> ParallelCorpus {
    let examples: Vec<Example> = corpus
        .examples
        .iter()
        .filter(|ex| crate::metrics::detect_language(vocab, &ex.tgt) == ex.tgt_lang)
        .cloned()
        .collect();
    ParallelCorpus {
        examples,
        split: corpus.split,
        noise_rate_applied: 0.0,
    }
}

// ---- JSONL + directory I/O ----

pub fn write_jsonl(path: &Path, corpus: &ParallelCorpus) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for ex in &corpus.examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path, split: Split) -> Result<ParallelCorpus> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let mut examples = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        examples.push(serde_json::from_str(&line)?);
    }
    Ok(ParallelCorpus {
        examples,
        split,
        noise_rate_applied: 0.0,
    })
}

pub const VOCAB_FILE: &str = "vocab.json";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const TEST_SUP_FILE: &str = "test_sup.jsonl";
pub const TEST_ZERO_FILE: &str = "test_zero.jsonl";
pub const NOISE_LOG_FILE: &str = "noise_log.jsonl";

impl CorpusSet {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(VOCAB_FILE), serde_json::to_string_pretty(&self.vocab)?)?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        write_jsonl(&dir.join(VALID_FILE), &self.valid)?;
        write_jsonl(&dir.join(TEST_SUP_FILE), &self.test_sup)?;
        write_jsonl(&dir.join(TEST_ZERO_FILE), &self.test_zero)?;
        let mut w = BufWriter::new(std::fs::File::create(dir.join(NOISE_LOG_FILE))?);
        for rec in &self.noise_log {
            serde_json::to_writer(&mut w, rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<CorpusSet> {
        let vocab: VocabSpec = serde_json::from_str(&std::fs::read_to_string(dir.join(VOCAB_FILE))?)?;
        let train = read_jsonl(&dir.join(TRAIN_FILE), Split::Train)?;
        let valid = read_jsonl(&dir.join(VALID_FILE), Split::Valid)?;
        let test_sup = read_jsonl(&dir.join(TEST_SUP_FILE), Split::TestSupervised)?;
        let test_zero = read_jsonl(&dir.join(TEST_ZERO_FILE), Split::TestZeroshot)?;
        let mut noise_log = Vec::new();
        let noise_path = dir.join(NOISE_LOG_FILE);
        if noise_path.exists() {
            let r = BufReader::new(std::fs::File::open(noise_path)?);
            for line in r.lines() {
                let line = line?;
                if !line.trim().is_empty() {
                    noise_log.push(serde_json::from_str(&line)?);
                }
            }
        }
        Ok(CorpusSet {
            vocab,
            train,
            valid,
            test_sup,
            test_zero,
            noise_log,
        })
    }
}
