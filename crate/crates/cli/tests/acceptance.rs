//! Release gate: ten end-to-end checks covering gradient fidelity, strategy
//! reduction identities, parameter invariance, decoding/metric oracles,
//! synthetic-corpus exactness, the seeded multi-run directional results, and
//! a CLI pipeline smoke. Each check prints one `ACCEPTANCE NN … PASS` line
//! (visible with `--nocapture`); a failed check panics with the same detail.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use lcs_core::beam::{beam_search, greedy_decode, translate, DecodeConfig, Decoded};
use lcs_core::checkpoint::Checkpoint;
use lcs_core::corpus::{
    build_corpus, denoise_filter, inject_noise, CorpusConfig, CorpusSet, ParallelCorpus,
};
use lcs_core::gradcheck::finite_difference_check;
use lcs_core::harness::{export_encoder_representations, pairs_from_corpus};
use lcs_core::metrics::{
    cosine, detect_language, interval_rates, language_rates, layer_similarity, IntervalStat,
    RateSummary,
};
use lcs_core::model::{
    decode_step, encode, init_params, loss_and_grads, ModelConfig,
};
use lcs_core::strategy::{
    decoder_start, prepare_example, prepare_source, StrategyName, StrategyOptions, StrategySpec,
};
use lcs_core::train::{train, TrainConfig};
use lcs_core::vocab::{VocabSpec, EOS_ID};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Operating point for the seeded directional experiments (checks 06-09):
// one corpus, one model shape, one training schedule shared by every cell.
const RUN_SEEDS: [u64; 3] = [1, 2, 3];
const NOISE_RATE: f64 = 0.2;
const RUN_STEPS: usize = 7000;
const RUN_BATCH_TOKENS: usize = 512;
const RUN_LR: f64 = 2e-3;
const RUN_WARMUP: usize = 800;
const RUN_CKPT_EVERY: usize = 200;
const RUN_AVG_LAST: usize = 5;
const EVAL_BEAM: usize = 1;
const ZS_PER_DIRECTION: usize = 50;
const INTERVAL_WINDOW: usize = 5;

fn lcs_spec(enc_layers: usize) -> StrategySpec {
    StrategySpec::build(StrategyName::Lcs, enc_layers, StrategyOptions::default()).unwrap()
}

fn spec_of(name: StrategyName, enc_layers: usize) -> StrategySpec {
    StrategySpec::build(name, enc_layers, StrategyOptions::default()).unwrap()
}

// ---- shared multi-run fixture ----

struct Cell {
    ckpt: Checkpoint,
    rates: RateSummary,
    intervals: Vec<IntervalStat>,
}

struct Fixture {
    set: CorpusSet,
    /// (strategy, seed) → trained-on-noisy cell.
    noisy: BTreeMap<(StrategyName, u64), Cell>,
    /// seed → T-Enc trained on the denoised corpus.
    denoised_tenc: BTreeMap<u64, Cell>,
    /// Train + zero-shot decode time for the nine noisy cells.
    comparison_wall: Duration,
}

fn decode_zero_shot(
    ckpt: &Checkpoint,
    spec: &StrategySpec,
    corpus: &ParallelCorpus,
) -> (Vec<Vec<u32>>, Vec<(String, String)>) {
    let dcfg = DecodeConfig {
        beam_size: EVAL_BEAM,
        length_penalty: 1.0,
        max_decode_len: 40,
    };
    let mut taken: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut hyps = Vec::new();
    let mut dirs = Vec::new();
    for ex in &corpus.examples {
        let key = (ex.src_lang.clone(), ex.tgt_lang.clone());
        let c = taken.entry(key.clone()).or_insert(0);
        if *c >= ZS_PER_DIRECTION {
            continue;
        }
        *c += 1;
        let d = translate(ckpt, &ex.src, &ex.src_lang, &ex.tgt_lang, spec, &dcfg)
            .expect("zero-shot decode");
        hyps.push(d.tokens);
        dirs.push(key);
    }
    (hyps, dirs)
}

fn train_cell(
    corpus: &ParallelCorpus,
    set: &CorpusSet,
    name: StrategyName,
    seed: u64,
) -> Cell {
    let mcfg = ModelConfig::desk(set.vocab.vocab_size());
    let tcfg = TrainConfig {
        max_steps: RUN_STEPS,
        batch_tokens: RUN_BATCH_TOKENS,
        lr_peak: RUN_LR,
        warmup_steps: RUN_WARMUP,
        checkpoint_every: RUN_CKPT_EVERY,
        average_last: RUN_AVG_LAST,
        seed,
        ..TrainConfig::desk()
    };
    let spec = spec_of(name, mcfg.enc_layers);
    let (ckpt, _) = train(corpus, &set.vocab, &spec, &mcfg, &tcfg)
        .unwrap_or_else(|e| panic!("{} seed {seed} failed to train: {e}", name.as_str()));
    let (hyps, dirs) = decode_zero_shot(&ckpt, &spec, &set.test_zero);
    let rates = language_rates(&set.vocab, &hyps, &dirs).expect("rates");
    let intervals =
        interval_rates(&set.vocab, &hyps, &dirs, INTERVAL_WINDOW).expect("intervals");
    Cell { ckpt, rates, intervals }
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let mut set = build_corpus(&CorpusConfig::default()).expect("corpus");
        let (noisy, log) =
            inject_noise(&set.train, &set.vocab, NOISE_RATE, CorpusConfig::default().seed)
                .expect("noise");
        assert!(!log.is_empty(), "noise injection corrupted nothing");
        set.train = noisy;
        let denoised = denoise_filter(&set.train, &set.vocab);
        assert!(denoised.examples.len() < set.train.examples.len());

        let started = Instant::now();
        let mut noisy_cells = BTreeMap::new();
        for name in [StrategyName::Lcs, StrategyName::TEnc, StrategyName::SEncTDec] {
            for seed in RUN_SEEDS {
                noisy_cells.insert((name, seed), train_cell(&set.train, &set, name, seed));
            }
        }
        let comparison_wall = started.elapsed();

        let mut denoised_tenc = BTreeMap::new();
        for seed in RUN_SEEDS {
            denoised_tenc.insert(seed, train_cell(&denoised, &set, StrategyName::TEnc, seed));
        }
        Fixture { set, noisy: noisy_cells, denoised_tenc, comparison_wall }
    })
}

// ---- 01: end-to-end gradients ----

#[test]
fn acceptance_01_model_gradients_match_finite_differences() {
    let started = Instant::now();
    let codes = lcs_core::vocab::default_codes(4).unwrap();
    let vocab = VocabSpec::build(&codes, 6, 3).unwrap();
    let mcfg = ModelConfig {
        enc_layers: 2,
        dec_layers: 2,
        d_model: 16,
        n_heads: 4,
        d_ff: 32,
        vocab_size: vocab.vocab_size(),
        max_len: 24,
        dropout: 0.0,
        label_smoothing: 0.1,
        post_norm: true,
    };
    let spec = lcs_spec(mcfg.enc_layers);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut batch = Vec::new();
    for (src_lang, tgt_lang) in [("en", "aa"), ("aa", "en"), ("bb", "cc")] {
        let n = rng.random_range(3..6);
        let concepts: Vec<u32> = (0..n).map(|_| rng.random_range(0..6)).collect();
        let src = vocab.lang(src_lang).unwrap().render(&concepts).unwrap();
        let tgt = vocab.lang(tgt_lang).unwrap().render(&concepts).unwrap();
        batch.push(prepare_example(&src, &tgt, src_lang, tgt_lang, &spec, &vocab).unwrap());
    }
    let params = init_params(&mcfg, 5).unwrap();
    let err = finite_difference_check(
        |p| loss_and_grads(&batch, p, &mcfg, 0),
        &params,
        1e-5,
        6,
        11,
    )
    .unwrap();
    let secs = started.elapsed().as_secs_f64();
    assert!(err <= 1e-4, "max relative gradient error {err:.3e} exceeds 1e-4");
    assert!(secs <= 60.0, "gradient check took {secs:.1}s, budget 60s");
    println!("ACCEPTANCE 01 model-gradients: PASS — max rel err {err:.3e} in {secs:.1}s");
}

// ---- 02: converter reduction identities ----

#[test]
fn acceptance_02_converter_reductions_recover_baselines() {
    let codes = lcs_core::vocab::default_codes(4).unwrap();
    let vocab = VocabSpec::build(&codes, 8, 9).unwrap();
    let mcfg = ModelConfig {
        enc_layers: 2,
        dec_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: vocab.vocab_size(),
        max_len: 24,
        dropout: 0.0,
        label_smoothing: 0.1,
        post_norm: true,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    // (a) zeroing the injected embedding row makes the injecting and
    // non-injecting encoders agree on every layer state.
    let mut params = init_params(&mcfg, 21).unwrap();
    let tgt_tag = vocab.tag_id("bb").unwrap() as usize;
    {
        let emb = params.get_mut("embed.weight").unwrap();
        let d = mcfg.d_model;
        emb.data_mut()[tgt_tag * d..(tgt_tag + 1) * d].fill(0.0);
    }
    let inject_on = lcs_spec(mcfg.enc_layers);
    let inject_off = StrategySpec::build(
        StrategyName::LcsVariant,
        mcfg.enc_layers,
        StrategyOptions { inject: Some(false), ..Default::default() },
    )
    .unwrap();
    let mut max_gap = 0.0f64;
    for _ in 0..5 {
        let n = rng.random_range(3..7);
        let concepts: Vec<u32> = (0..n).map(|_| rng.random_range(0..8)).collect();
        let src = vocab.lang("aa").unwrap().render(&concepts).unwrap();
        let (ids_on, plan_on) = prepare_source(&src, "aa", "bb", &inject_on, &vocab).unwrap();
        let (ids_off, plan_off) = prepare_source(&src, "aa", "bb", &inject_off, &vocab).unwrap();
        assert_eq!(ids_on, ids_off, "tagged encoder inputs must agree");
        let t_on = encode(&ids_on, &plan_on, &params, &mcfg).unwrap();
        let t_off = encode(&ids_off, &plan_off, &params, &mcfg).unwrap();
        for (a, b) in t_on.states.iter().zip(&t_off.states) {
            for (x, y) in a.data().iter().zip(b.data()) {
                max_gap = max_gap.max((x - y).abs());
            }
        }
    }
    assert!(max_gap <= 1e-12, "zeroed injection changed encoder states by {max_gap:.3e}");

    // (b) a depth-0 converter with injection off prepares and scores
    // examples exactly like the source-tag/target-tag baseline.
    let reduced = StrategySpec::build(
        StrategyName::LcsVariant,
        mcfg.enc_layers,
        StrategyOptions { k: Some(0), inject: Some(false), ..Default::default() },
    )
    .unwrap();
    let baseline = spec_of(StrategyName::SEncTDec, mcfg.enc_layers);
    let params = init_params(&mcfg, 22).unwrap();
    let mut batch_red = Vec::new();
    let mut batch_base = Vec::new();
    for _ in 0..6 {
        let n = rng.random_range(3..7);
        let concepts: Vec<u32> = (0..n).map(|_| rng.random_range(0..8)).collect();
        let src = vocab.lang("en").unwrap().render(&concepts).unwrap();
        let tgt = vocab.lang("cc").unwrap().render(&concepts).unwrap();
        let r = prepare_example(&src, &tgt, "en", "cc", &reduced, &vocab).unwrap();
        let b = prepare_example(&src, &tgt, "en", "cc", &baseline, &vocab).unwrap();
        assert_eq!(r.enc_input_ids, b.enc_input_ids);
        assert_eq!(r.dec_input_ids, b.dec_input_ids);
        assert_eq!(r.dec_target_ids, b.dec_target_ids);
        assert_eq!(r.plan, b.plan, "injection plans must reduce to the baseline's");
        batch_red.push(r);
        batch_base.push(b);
    }
    let loss_red = loss_and_grads(&batch_red, &params, &mcfg, 0).unwrap().loss;
    let loss_base = loss_and_grads(&batch_base, &params, &mcfg, 0).unwrap().loss;
    assert!(
        loss_red.to_bits() == loss_base.to_bits(),
        "reduced converter loss {loss_red} differs from baseline loss {loss_base}"
    );
    println!(
        "ACCEPTANCE 02 converter-reductions: PASS — encoder gap {max_gap:.1e}, losses bit-equal"
    );
}

// ---- 03: parameter invariance across strategies ----

#[test]
fn acceptance_03_parameter_sets_are_strategy_invariant() {
    let set = build_corpus(&CorpusConfig {
        n_langs: 3,
        grammar_size: 8,
        train_pairs_per_direction: 4,
        valid_pairs_per_direction: 1,
        test_pairs_per_direction: 1,
        min_len: 3,
        max_len: 6,
        seed: 13,
    })
    .unwrap();
    // Depth 4 so the attention-masked probe (needs ≥3 layers) participates.
    let mcfg = ModelConfig {
        enc_layers: 4,
        dec_layers: 1,
        d_model: 16,
        n_heads: 2,
        d_ff: 32,
        vocab_size: set.vocab.vocab_size(),
        max_len: 16,
        dropout: 0.0,
        label_smoothing: 0.1,
        post_norm: true,
    };
    let tcfg = TrainConfig {
        max_steps: 2,
        batch_tokens: 64,
        warmup_steps: 1,
        checkpoint_every: 2,
        average_last: 1,
        ..TrainConfig::desk()
    };
    let mut shapes: Vec<(StrategyName, Vec<(String, Vec<usize>)>)> = Vec::new();
    for name in StrategyName::all() {
        let spec = spec_of(name, mcfg.enc_layers);
        let (ckpt, _) = train(&set.train, &set.vocab, &spec, &mcfg, &tcfg)
            .unwrap_or_else(|e| panic!("{} failed to train: {e}", name.as_str()));
        let inv: Vec<(String, Vec<usize>)> = ckpt
            .params
            .iter()
            .map(|(k, v)| (k.clone(), v.shape().to_vec()))
            .collect();
        shapes.push((name, inv));
    }
    let (first_name, first) = &shapes[0];
    for (name, inv) in &shapes[1..] {
        assert_eq!(
            inv,
            first,
            "{} and {} disagree on parameter names/shapes",
            name.as_str(),
            first_name.as_str()
        );
    }

    // A checkpoint trained under the source-tag/target-tag baseline resumes
    // under the converter strategy with nothing missing or unexpected.
    let dir = tempfile::tempdir().unwrap();
    let base_spec = spec_of(StrategyName::SEncTDec, mcfg.enc_layers);
    let (ckpt, _) = train(&set.train, &set.vocab, &base_spec, &mcfg, &tcfg).unwrap();
    let path = dir.path().join("base.bin");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    let names_before: BTreeSet<&String> = loaded.params.keys().collect();
    let (resumed, metrics) =
        lcs_core::train::finetune(&loaded, &lcs_spec(mcfg.enc_layers), &set.train, &tcfg)
            .expect("baseline checkpoint must resume under the converter strategy");
    let names_after: BTreeSet<&String> = resumed.params.keys().collect();
    assert_eq!(names_before, names_after, "resume changed the parameter set");
    assert_eq!(metrics.len(), tcfg.max_steps);
    println!(
        "ACCEPTANCE 03 parameter-invariance: PASS — {} strategies share {} tensors; baseline \
         checkpoint resumes under the converter",
        shapes.len(),
        first.len()
    );
}

// ---- 04: decoding and metric oracles ----

fn prefix_scorer(seed: u64, vocab: usize) -> impl FnMut(&[u32]) -> lcs_core::error::Result<Vec<f64>> {
    move |prefix: &[u32]| {
        let mut h = 0xcbf29ce484222325u64 ^ seed;
        for &t in prefix {
            h ^= t as u64 + 1;
            h = h.wrapping_mul(0x100000001b3);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        Ok((0..vocab).map(|_| rng.random_range(-3.0..3.0)).collect())
    }
}

/// Every sequence beam search can terminate with, scored exactly as the
/// decoder scores it: EOS-terminated prefixes, plus unfinished prefixes at
/// the length cap.
fn enumerate_terminals(
    scorer: &mut impl FnMut(&[u32]) -> lcs_core::error::Result<Vec<f64>>,
    start: u32,
    eos: u32,
    vocab: usize,
    cap: usize,
    alpha: f64,
) -> Vec<(Vec<u32>, f64, bool)> {
    fn log_softmax(logits: &[f64]) -> Vec<f64> {
        let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = logits.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln() + mx;
        logits.iter().map(|&x| x - lse).collect()
    }
    let penalty = |len: usize| ((5.0 + len as f64) / 6.0).powf(alpha);
    let mut out = Vec::new();
    let mut frontier: Vec<(Vec<u32>, f64)> = vec![(Vec::new(), 0.0)];
    for depth in 0..cap {
        let mut next = Vec::new();
        for (tokens, sum) in frontier {
            let mut prefix = Vec::with_capacity(tokens.len() + 1);
            prefix.push(start);
            prefix.extend_from_slice(&tokens);
            let lp = log_softmax(&scorer(&prefix).unwrap());
            for v in 0..vocab as u32 {
                let s = sum + lp[v as usize];
                let mut t = tokens.clone();
                t.push(v);
                if v == eos {
                    out.push((t.clone(), s / penalty(t.len()), true));
                } else if depth + 1 == cap {
                    out.push((t.clone(), s / penalty(t.len()), false));
                } else {
                    next.push((t, s));
                }
            }
        }
        frontier = next;
    }
    out
}

#[test]
fn acceptance_04_decoding_and_metric_oracles_hold() {
    // (a) the four language-rate buckets partition every report.
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    for case in 0..1000 {
        let n_langs = rng.random_range(3..=5);
        let codes = lcs_core::vocab::default_codes(n_langs).unwrap();
        let grammar = rng.random_range(4..=12);
        let vocab = VocabSpec::build(&codes, grammar, case).unwrap();
        let n_hyps = rng.random_range(1..=8);
        let mut hyps = Vec::new();
        let mut dirs = Vec::new();
        for _ in 0..n_hyps {
            let len = rng.random_range(1..=7);
            let hyp: Vec<u32> = (0..len)
                .map(|_| {
                    let lang = &codes[rng.random_range(0..codes.len())];
                    let c = rng.random_range(0..grammar);
                    vocab.lang(lang).unwrap().render(&[c]).unwrap()[0]
                })
                .collect();
            let src = codes[rng.random_range(1..codes.len())].clone();
            let mut tgt = codes[rng.random_range(1..codes.len())].clone();
            if tgt == src {
                tgt = codes[(codes.iter().position(|c| *c == src).unwrap()) % (codes.len() - 1) + 1]
                    .clone();
            }
            hyps.push(hyp);
            dirs.push((src, tgt));
        }
        let summary = language_rates(&vocab, &hyps, &dirs).unwrap();
        for report in summary.per_direction.iter().chain([&summary.macro_avg]) {
            let s = report.bucket_sum();
            assert!(
                (s - 100.0).abs() <= 1e-9,
                "case {case}: buckets sum to {s}, not 100"
            );
        }
    }

    // (b) corpus BLEU on a worked single-pair example.
    let b = lcs_core::metrics::bleu(&[vec![1, 2, 3, 4]], &[vec![1, 2, 3, 4, 5]], 4).unwrap();
    let hand = 100.0 * (1.0f64 - 5.0 / 4.0).exp();
    assert!((b - 77.88).abs() <= 0.01, "single-pair bleu {b} vs hand value 77.88");
    assert!((b - hand).abs() <= 1e-9);

    // (c) a width-1 beam reproduces greedy decoding on random models.
    let codes = lcs_core::vocab::default_codes(3).unwrap();
    let vocab = VocabSpec::build(&codes, 4, 17).unwrap();
    let mcfg = ModelConfig {
        enc_layers: 1,
        dec_layers: 1,
        d_model: 8,
        n_heads: 2,
        d_ff: 16,
        vocab_size: vocab.vocab_size(),
        max_len: 12,
        dropout: 0.0,
        label_smoothing: 0.0,
        post_norm: true,
    };
    let spec = spec_of(StrategyName::TEnc, mcfg.enc_layers);
    let mut greedy_rng = ChaCha8Rng::seed_from_u64(23);
    for model_seed in 0..100u64 {
        let params = init_params(&mcfg, model_seed).unwrap();
        let ckpt = Checkpoint::new(mcfg.clone(), vocab.clone(), params).unwrap();
        let n = greedy_rng.random_range(2..5);
        let concepts: Vec<u32> = (0..n).map(|_| greedy_rng.random_range(0..4)).collect();
        let src = vocab.lang("aa").unwrap().render(&concepts).unwrap();
        let dcfg = DecodeConfig { beam_size: 1, length_penalty: 1.0, max_decode_len: 8 };
        let via_beam = translate(&ckpt, &src, "aa", "bb", &spec, &dcfg).unwrap();
        let (enc_ids, plan) = prepare_source(&src, "aa", "bb", &spec, &ckpt.vocab).unwrap();
        let trace = encode(&enc_ids, &plan, &ckpt.params, &ckpt.cfg).unwrap();
        let start = decoder_start(&spec, &ckpt.vocab, "aa", "bb").unwrap();
        let cap = dcfg.max_decode_len.min(ckpt.cfg.max_len - 1);
        let eff = DecodeConfig { max_decode_len: cap, ..dcfg };
        let mut step =
            |prefix: &[u32]| decode_step(trace.final_state(), prefix, &ckpt.params, &ckpt.cfg);
        let via_greedy =
            greedy_decode(&mut step, start, EOS_ID, ckpt.cfg.vocab_size, &eff).unwrap();
        assert_eq!(via_beam.tokens, via_greedy.tokens, "model seed {model_seed}");
        assert_eq!(via_beam.finished, via_greedy.finished);
        assert!((via_beam.score - via_greedy.score).abs() <= 1e-12);
    }

    // (d) an unpruned beam matches exhaustive enumeration on a toy space.
    const VOCAB: usize = 8;
    const CAP: usize = 3;
    for seed in 0..25u64 {
        for alpha in [0.6, 1.0] {
            let mut oracle_scorer = prefix_scorer(seed, VOCAB);
            let mut terminals =
                enumerate_terminals(&mut oracle_scorer, 0, 1, VOCAB, CAP, alpha);
            terminals.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            let (best_tokens, best_score, best_finished) = terminals[0].clone();
            let cfg = DecodeConfig {
                beam_size: 512,
                length_penalty: alpha,
                max_decode_len: CAP,
            };
            let mut scorer = prefix_scorer(seed, VOCAB);
            let got: Decoded = beam_search(&mut scorer, 0, 1, VOCAB, &cfg).unwrap();
            let mut want = best_tokens.clone();
            if want.last() == Some(&1) {
                want.pop();
            }
            assert_eq!(got.tokens, want, "seed {seed} alpha {alpha}");
            assert_eq!(got.finished, best_finished);
            assert!(
                (got.score - best_score).abs() <= 1e-12,
                "seed {seed} alpha {alpha}: {} vs {}",
                got.score,
                best_score
            );
        }
    }
    println!(
        "ACCEPTANCE 04 decoding-and-metric-oracles: PASS — 1000 rate cases, worked bleu, 100 \
         greedy models, 50 exhaustive beams"
    );
}

// ---- 05: synthetic-corpus exactness ----

#[test]
fn acceptance_05_language_detection_and_denoising_are_exact() {
    let codes = lcs_core::vocab::default_codes(5).unwrap();
    let vocab = VocabSpec::build(&codes, 40, 51).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(52);
    for i in 0..10_000 {
        let lang = &codes[i % codes.len()];
        let len = rng.random_range(1..=14);
        let concepts: Vec<u32> = (0..len).map(|_| rng.random_range(0..40)).collect();
        let tokens = vocab.lang(lang).unwrap().render(&concepts).unwrap();
        let detected = detect_language(&vocab, &tokens);
        assert_eq!(detected, lang, "sentence {i} rendered in {lang} detected as {detected}");
    }

    let set = build_corpus(&CorpusConfig {
        n_langs: 4,
        grammar_size: 30,
        train_pairs_per_direction: 400,
        valid_pairs_per_direction: 2,
        test_pairs_per_direction: 2,
        min_len: 4,
        max_len: 10,
        seed: 53,
    })
    .unwrap();
    let (noisy, log) = inject_noise(&set.train, &set.vocab, 0.2, 54).unwrap();
    assert!(!log.is_empty());
    let corrupted: BTreeSet<usize> = log.iter().map(|e| e.index).collect();
    let survivors = denoise_filter(&noisy, &set.vocab);
    let expected: Vec<_> = noisy
        .examples
        .iter()
        .enumerate()
        .filter(|(i, _)| !corrupted.contains(i))
        .map(|(_, ex)| ex.clone())
        .collect();
    assert_eq!(
        survivors.examples, expected,
        "denoising must keep exactly the uncorrupted pairs, in order"
    );
    println!(
        "ACCEPTANCE 05 corpus-exactness: PASS — 10000 detections exact; denoise recovered {} of \
         {} pairs",
        survivors.examples.len(),
        noisy.examples.len()
    );
}

// ---- 06: zero-shot accuracy ordering ----

#[test]
fn acceptance_06_zero_shot_accuracy_ordering_holds() {
    let fx = fixture();
    let acc = |name: StrategyName, seed: u64| fx.noisy[&(name, seed)].rates.macro_avg.acc;
    let mut ordering_ok = 0;
    let mut lcs_ok = 0;
    let mut per_seed = Vec::new();
    for seed in RUN_SEEDS {
        let l = acc(StrategyName::Lcs, seed);
        let t = acc(StrategyName::TEnc, seed);
        let s = acc(StrategyName::SEncTDec, seed);
        if l >= t && t >= s {
            ordering_ok += 1;
        }
        if l >= 90.0 {
            lcs_ok += 1;
        }
        per_seed.push(format!("seed {seed}: LCS {l:.1} / T-Enc {t:.1} / S-Enc-T-Dec {s:.1}"));
    }
    let wall_min = fx.comparison_wall.as_secs_f64() / 60.0;
    let detail = per_seed.join("; ");
    assert!(
        ordering_ok >= 2,
        "accuracy ordering LCS ≥ T-Enc ≥ S-Enc-T-Dec held in only {ordering_ok}/3 seeds ({detail})"
    );
    assert!(
        lcs_ok >= 2,
        "LCS zero-shot accuracy ≥ 90% in only {lcs_ok}/3 seeds ({detail})"
    );
    println!(
        "ACCEPTANCE 06 zero-shot-ordering: PASS — ordering {ordering_ok}/3 seeds, LCS ≥ 90% \
         {lcs_ok}/3 seeds ({detail}; nine runs took {wall_min:.1} min)"
    );
}

// ---- 07: noise drives source-copy errors ----

#[test]
fn acceptance_07_noise_raises_source_language_errors() {
    let fx = fixture();
    let mut ok = 0;
    let mut per_seed = Vec::new();
    for seed in RUN_SEEDS {
        let noisy = fx.noisy[&(StrategyName::TEnc, seed)].rates.macro_avg.to_src;
        let denoised = fx.denoised_tenc[&seed].rates.macro_avg.to_src;
        if noisy > denoised {
            ok += 1;
        }
        per_seed.push(format!("seed {seed}: noisy {noisy:.2} vs denoised {denoised:.2}"));
    }
    let detail = per_seed.join("; ");
    assert!(
        ok >= 2,
        "To-Source rate exceeded its denoised counterpart in only {ok}/3 seeds ({detail})"
    );
    println!("ACCEPTANCE 07 noise-to-source-contrast: PASS — {ok}/3 seeds ({detail})");
}

// ---- 08: accuracy decay along decoding and interval spread ----

fn spread(stats: &[IntervalStat]) -> f64 {
    let accs: Vec<f64> = stats.iter().map(|s| s.acc).collect();
    let mx = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mn = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    mx - mn
}

#[test]
fn acceptance_08_interval_accuracy_decay_and_spread() {
    let fx = fixture();
    let mut ok = 0;
    let mut per_seed = Vec::new();
    for seed in RUN_SEEDS {
        let setd = &fx.noisy[&(StrategyName::SEncTDec, seed)].intervals;
        let lcs = &fx.noisy[&(StrategyName::Lcs, seed)].intervals;
        let head = setd[0].acc;
        let tail: Vec<&IntervalStat> = setd.iter().filter(|s| s.interval >= 2).collect();
        let tail_n: usize = tail.iter().map(|s| s.n).sum();
        let tail_acc = if tail_n == 0 {
            f64::NAN
        } else {
            tail.iter().map(|s| s.acc * s.n as f64).sum::<f64>() / tail_n as f64
        };
        let decays = tail_acc.is_finite() && tail_acc < head;
        let tighter = spread(lcs) < spread(setd);
        if decays && tighter {
            ok += 1;
        }
        per_seed.push(format!(
            "seed {seed}: head {head:.1} tail {tail_acc:.1}, spread LCS {:.1} vs {:.1}",
            spread(lcs),
            spread(setd)
        ));
    }
    let detail = per_seed.join("; ");
    assert!(
        ok >= 2,
        "interval decay plus tighter converter spread held in only {ok}/3 seeds ({detail})"
    );
    println!("ACCEPTANCE 08 interval-decay-and-spread: PASS — {ok}/3 seeds ({detail})");
}

// ---- 09: layer-similarity export round-trip and final-layer contrast ----

#[test]
fn acceptance_09_layer_similarity_roundtrip_and_contrast() {
    let fx = fixture();
    let pairs = pairs_from_corpus(&fx.set.test_zero, 40);
    assert!(!pairs.is_empty());

    // Exactness: the curve recomputed from the exported pooled states matches
    // the in-process computation.
    let cell = &fx.noisy[&(StrategyName::Lcs, RUN_SEEDS[0])];
    let spec = lcs_spec(cell.ckpt.cfg.enc_layers);
    let sim =
        layer_similarity(&pairs, &spec, &fx.set.vocab, &cell.ckpt.params, &cell.ckpt.cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("representations.csv");
    export_encoder_representations(&csv_path, &cell.ckpt, &spec, &pairs).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    let mut pooled: BTreeMap<(usize, String, usize), Vec<f64>> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let mut it = line.split(',');
        let pair: usize = it.next().unwrap().parse().unwrap();
        let side = it.next().unwrap().to_string();
        let _lang = it.next().unwrap();
        let _direction = it.next().unwrap();
        let layer: usize = it.next().unwrap().parse().unwrap();
        let v: Vec<f64> = it.map(|x| x.parse().unwrap()).collect();
        pooled.insert((pair, side, layer), v);
    }
    let n_layers = cell.ckpt.cfg.enc_layers;
    let mut max_gap = 0.0f64;
    let mut skipped = 0usize;
    for (l, &(layer_idx, expected)) in sim.per_layer.iter().enumerate() {
        assert_eq!(l, layer_idx);
        let mut sum = 0.0;
        let mut count = 0usize;
        for p in 0..pairs.len() {
            let a = &pooled[&(p, "x".to_string(), l)];
            let b = &pooled[&(p, "y".to_string(), l)];
            match cosine(a, b) {
                Some(c) => {
                    sum += c;
                    count += 1;
                }
                None => skipped += 1,
            }
        }
        let recomputed = sum / count as f64;
        max_gap = max_gap.max((recomputed - expected).abs());
    }
    assert!(
        max_gap <= 1e-9,
        "recomputed similarity drifted {max_gap:.3e} from the in-process curve"
    );
    assert_eq!(skipped, sim.skipped, "exclusion counts disagree");
    let _ = n_layers;

    // Directional contrast: the converter ends with less cross-target
    // similarity in its final encoder layer than the target-tag baseline.
    let mut ok = 0;
    let mut per_seed = Vec::new();
    for seed in RUN_SEEDS {
        let lcs_cell = &fx.noisy[&(StrategyName::Lcs, seed)];
        let tenc_cell = &fx.noisy[&(StrategyName::TEnc, seed)];
        let l = layer_similarity(
            &pairs,
            &lcs_spec(lcs_cell.ckpt.cfg.enc_layers),
            &fx.set.vocab,
            &lcs_cell.ckpt.params,
            &lcs_cell.ckpt.cfg,
        )
        .unwrap();
        let t = layer_similarity(
            &pairs,
            &spec_of(StrategyName::TEnc, tenc_cell.ckpt.cfg.enc_layers),
            &fx.set.vocab,
            &tenc_cell.ckpt.params,
            &tenc_cell.ckpt.cfg,
        )
        .unwrap();
        let l_final = l.per_layer.last().unwrap().1;
        let t_final = t.per_layer.last().unwrap().1;
        if l_final < t_final {
            ok += 1;
        }
        per_seed.push(format!("seed {seed}: {l_final:.3} vs {t_final:.3}"));
    }
    let detail = per_seed.join("; ");
    assert!(
        ok >= 2,
        "converter final-layer similarity sat below the baseline in only {ok}/3 seeds ({detail})"
    );
    println!(
        "ACCEPTANCE 09 layer-similarity: PASS — export round-trip gap {max_gap:.1e}; contrast \
         {ok}/3 seeds ({detail})"
    );
}

// ---- 10: CLI pipeline smoke ----

fn run_cli(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_lcs-mnmt"))
        .args(args)
        .output()
        .expect("spawn cli")
}

fn assert_csv(path: &Path, header: &str) -> usize {
    let text = std::fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("missing artifact {}: {e}", path.display()));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some(header), "bad header in {}", path.display());
    let width = header.split(',').count();
    let mut rows = 0;
    for line in lines {
        assert_eq!(
            line.split(',').count(),
            width,
            "ragged row in {}: {line}",
            path.display()
        );
        rows += 1;
    }
    rows
}

fn assert_manifest(dir: &Path) {
    let text = std::fs::read_to_string(dir.join("manifest.json")).expect("manifest.json");
    let v: serde_json::Value = serde_json::from_str(&text).expect("manifest parses");
    for key in ["config_hash", "seed", "revision", "wall_seconds"] {
        assert!(v.get(key).is_some(), "manifest lacks {key}");
    }
    assert!(dir.join("run_config.txt").exists(), "run_config.txt missing");
}

#[test]
fn acceptance_10_cli_pipeline_smoke() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("corpus");
    let run = tmp.path().join("run");
    let cmp = tmp.path().join("cmp");
    let trans = tmp.path().join("trans");

    let out = run_cli(&[
        "gen-data", "--langs", "3", "--pairs", "240", "--valid-pairs", "24",
        "--test-pairs", "48", "--noise", "0.1", "--grammar", "12", "--min-len", "4",
        "--max-len", "8", "--seed", "5", "--out", data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "gen-data: {}", String::from_utf8_lossy(&out.stderr));
    for f in ["vocab.json", "train.jsonl", "valid.jsonl", "test_sup.jsonl", "test_zero.jsonl"] {
        assert!(data.join(f).exists(), "corpus artifact {f} missing");
    }
    assert_manifest(&data);
    let set = CorpusSet::load(&data).expect("generated corpus loads");
    assert!(!set.test_zero.examples.is_empty());

    let out = run_cli(&[
        "train", "--data", data.to_str().unwrap(), "--strategy", "LCS", "--steps", "200",
        "--batch-tokens", "256", "--d-model", "32", "--ff", "64", "--heads", "2",
        "--enc-layers", "2", "--dec-layers", "1", "--max-len", "24", "--lr", "2e-3",
        "--warmup", "40", "--ckpt-every", "50", "--avg-last", "2", "--seed", "3",
        "--out", run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "train: {}", String::from_utf8_lossy(&out.stderr));
    let ckpt_path = run.join("ckpt.bin");
    let ckpt = Checkpoint::load(&ckpt_path).expect("trained checkpoint loads");
    assert_eq!(ckpt.cfg.d_model, 32);
    assert_eq!(assert_csv(&run.join("steps.csv"), "step,lr,loss,tokens"), 200);
    assert_manifest(&run);

    let ex = &set.test_zero.examples[0];
    let sentence = ex
        .src
        .iter()
        .map(|t| t.to_string())
        .collect::<Vec<_>>()
        .join(" ");
    let direction = format!("{}-{}", ex.src_lang, ex.tgt_lang);
    let out = run_cli(&[
        "translate", "--ckpt", ckpt_path.to_str().unwrap(), "--direction", &direction,
        "--sentence", &sentence, "--strategy", "LCS", "--beam", "2",
        "--out", trans.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "translate: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(!stdout.trim().is_empty(), "translate printed nothing");
    for tok in stdout.split_whitespace() {
        let id: u32 = tok.parse().expect("translation tokens are ids");
        assert!((id as usize) < ckpt.cfg.vocab_size);
    }
    let listed = std::fs::read_to_string(trans.join("translations.txt")).expect("translations.txt");
    assert_eq!(listed.trim(), stdout.trim());
    assert_manifest(&trans);

    let out = run_cli(&[
        "analyze", "compare", "--data", data.to_str().unwrap(), "--seeds", "1",
        "--strategies", "LCS,T-Enc", "--steps", "40", "--batch-tokens", "256",
        "--d-model", "16", "--ff", "32", "--heads", "2", "--enc-layers", "1",
        "--dec-layers", "1", "--max-len", "24", "--warmup", "10", "--ckpt-every", "20",
        "--avg-last", "1", "--beam", "1", "--sup-per-direction", "2",
        "--zs-per-direction", "2", "--out", cmp.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "analyze compare: {}", String::from_utf8_lossy(&out.stderr));
    let cells_header = "strategy,seed,diverged_at,sup_n,sup_exact,sup_bleu,zs_n,zs_exact,zs_bleu,zs_acc,zs_to_src,zs_to_en,zs_to_other";
    let rows = assert_csv(&cmp.join("comparison_cells.csv"), cells_header);
    assert_eq!(rows, 2, "one row per strategy/seed cell");
    let summary_header = "strategy,seeds_ok,seeds_diverged,zs_exact_mean,zs_exact_spread,zs_bleu_mean,zs_bleu_spread,zs_acc_mean,zs_acc_spread,sup_exact_mean,sup_bleu_mean";
    assert_eq!(assert_csv(&cmp.join("comparison_summary.csv"), summary_header), 2);
    for s in ["LCS", "T-Enc"] {
        assert!(cmp.join(format!("ckpt_{s}_1.bin")).exists(), "comparison checkpoint {s} missing");
        assert!(cmp.join(format!("steps_{s}_1.csv")).exists(), "comparison curve {s} missing");
    }
    assert_manifest(&cmp);

    let secs = started.elapsed().as_secs_f64();
    assert!(secs <= 180.0, "pipeline smoke took {secs:.0}s, budget 180s");
    println!("ACCEPTANCE 10 cli-pipeline-smoke: PASS — full pipeline in {secs:.0}s");
}
