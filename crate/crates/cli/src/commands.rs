//! Subcommand bodies. Every command resolves its settings through
//! `resolve::Resolver`, touches the filesystem only inside its `--out`
//! directory, and records the effective configuration there.

use std::collections::BTreeMap;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use lcs_core::beam::{self, DecodeConfig};
use lcs_core::checkpoint::Checkpoint;
use lcs_core::corpus::{build_corpus, inject_noise, CorpusConfig, CorpusSet, ParallelCorpus};
use lcs_core::harness::{
    evaluate, export_encoder_representations, pairs_from_corpus, run_interval_analysis,
    run_k_sweep, run_layer_similarity, run_noise_contrast, run_strategy_comparison, write_manifest,
    EvalLimits,
};
use lcs_core::kvconfig;
use lcs_core::model::ModelConfig;
use lcs_core::strategy::{StrategyName, StrategyOptions, StrategySpec, TagSide};
use lcs_core::train::{StepMetric, TrainConfig};
use lcs_core::{Error, Result};

use crate::resolve::{parse_direction, parse_list, parse_strategies, parse_tag, Resolver};
use crate::{
    CompareArgs, CkptRuns, DecodeFlags, EvalArgs, ExportArgs, GenDataArgs, IntervalsArgs,
    KsweepArgs, LayersimArgs, ModelFlags, NoiseArgs, RunCommon, StrategyFlags, TrainArgs,
    TrainFlags, TranslateArgs,
};

// ---- shared resolution ----

fn resolve_model(r: &Resolver, f: &ModelFlags, vocab_size: usize) -> Result<ModelConfig> {
    let d = ModelConfig::desk(vocab_size);
    Ok(ModelConfig {
        enc_layers: r.get_or(f.enc_layers, "enc_layers", d.enc_layers)?,
        dec_layers: r.get_or(f.dec_layers, "dec_layers", d.dec_layers)?,
        d_model: r.get_or(f.d_model, "d_model", d.d_model)?,
        n_heads: r.get_or(f.heads, "heads", d.n_heads)?,
        d_ff: r.get_or(f.ff, "ff", d.d_ff)?,
        vocab_size,
        max_len: r.get_or(f.max_len, "max_len", d.max_len)?,
        dropout: r.get_or(f.dropout, "dropout", d.dropout)?,
        label_smoothing: d.label_smoothing,
        post_norm: d.post_norm,
    })
}

fn resolve_train(r: &Resolver, f: &TrainFlags, seed: u64) -> Result<TrainConfig> {
    let d = TrainConfig::desk();
    Ok(TrainConfig {
        max_steps: r.get_or(f.steps, "steps", d.max_steps)?,
        batch_tokens: r.get_or(f.batch_tokens, "batch_tokens", d.batch_tokens)?,
        lr_peak: r.get_or(f.lr, "lr", d.lr_peak)?,
        warmup_steps: r.get_or(f.warmup, "warmup", d.warmup_steps)?,
        label_smoothing: r.get_or(f.smoothing, "smoothing", d.label_smoothing)?,
        checkpoint_every: r.get_or(f.ckpt_every, "ckpt_every", d.checkpoint_every)?,
        average_last: r.get_or(f.avg_last, "avg_last", d.average_last)?,
        seed,
        ..d
    })
}

fn resolve_decode(r: &Resolver, f: &DecodeFlags) -> Result<DecodeConfig> {
    let d = DecodeConfig::default();
    Ok(DecodeConfig {
        beam_size: r.get_or(f.beam, "beam", d.beam_size)?,
        length_penalty: r.get_or(f.length_penalty, "length_penalty", d.length_penalty)?,
        max_decode_len: r.get_or(f.max_decode_len, "max_decode_len", d.max_decode_len)?,
    })
}

fn resolve_strategy(
    r: &Resolver,
    f: &StrategyFlags,
    default_name: &str,
) -> Result<(StrategyName, StrategyOptions)> {
    let name = StrategyName::parse(&r.get_or(
        f.strategy.clone(),
        "strategy",
        default_name.to_string(),
    )?)?;
    let tag = |cli: &Option<String>, key: &str| -> Result<Option<Option<TagSide>>> {
        Ok(match r.opt(cli.clone(), key)? {
            Some(v) => Some(parse_tag(&v)?),
            None => None,
        })
    };
    Ok((
        name,
        StrategyOptions {
            k: r.opt(f.k, "k")?,
            shallow_tag: tag(&f.shallow_tag, "shallow_tag")?,
            converter_tag: tag(&f.converter_tag, "converter_tag")?,
            decoder_tag: tag(&f.decoder_tag, "decoder_tag")?,
            inject: r.opt(f.inject, "inject")?,
        },
    ))
}

/// Seeds for multi-run analyses: `--seeds` / config `seeds`, else the single
/// seed fallback chain.
fn resolve_seeds(r: &Resolver, cli: Option<String>) -> Result<Vec<u64>> {
    match r.opt(cli, "seeds")? {
        Some(s) => parse_list(&s, "seed"),
        None => Ok(vec![r.seed(None)?]),
    }
}

fn effective_config(pairs: &[(&str, String)]) -> String {
    let map: BTreeMap<String, String> =
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
    kvconfig::render(&map)
}

fn write_steps_csv(path: &PathBuf, metrics: &[StepMetric]) -> Result<()> {
    let mut text = String::from("step,lr,loss,tokens\n");
    for m in metrics {
        text.push_str(&format!("{},{},{},{}\n", m.step, m.lr, m.loss, m.tokens));
    }
    fs::write(path, text)?;
    Ok(())
}

// ---- gen-data ----

pub fn gen_data(a: GenDataArgs) -> Result<()> {
    let started = Instant::now();
    let r = Resolver::load(a.config.as_deref())?;
    let langs = r.get_or(a.langs, "langs", 4usize)?;
    let pairs = r.get_or(a.pairs, "pairs", 8000usize)?;
    let valid_pairs = r.get_or(a.valid_pairs, "valid_pairs", 1200usize)?;
    let test_pairs = r.get_or(a.test_pairs, "test_pairs", 3000usize)?;
    let noise = r.get_or(a.noise, "noise", 0.0f64)?;
    let grammar = r.get_or(a.grammar, "grammar", 200u32)?;
    let min_len = r.get_or(a.min_len, "min_len", 5usize)?;
    let max_len = r.get_or(a.max_len, "max_len", 15usize)?;
    let seed = r.seed(a.seed)?;
    let out: PathBuf = r.require(a.out, "out")?;
    if !(0.0..1.0).contains(&noise) {
        return Err(Error::Config(format!("--noise {noise} outside [0, 1)")));
    }

    // Totals are spread over the supervised directions; the same
    // per-direction test count also applies to each zero-shot direction.
    let n_dirs = 2 * langs.saturating_sub(1).max(1);
    let per = |total: usize| total.div_ceil(n_dirs).max(1);
    let ccfg = CorpusConfig {
        n_langs: langs,
        grammar_size: grammar,
        train_pairs_per_direction: per(pairs),
        valid_pairs_per_direction: per(valid_pairs),
        test_pairs_per_direction: per(test_pairs),
        min_len,
        max_len,
        seed,
    };
    let mut set = build_corpus(&ccfg)?;
    if noise > 0.0 {
        let (noisy, log) = inject_noise(&set.train, &set.vocab, noise, seed)?;
        set.train = noisy;
        set.noise_log = log;
    }
    set.save(&out)?;
    let cfg_text = effective_config(&[
        ("langs", langs.to_string()),
        ("pairs", pairs.to_string()),
        ("valid_pairs", valid_pairs.to_string()),
        ("test_pairs", test_pairs.to_string()),
        ("train_pairs_per_direction", ccfg.train_pairs_per_direction.to_string()),
        ("noise", noise.to_string()),
        ("grammar", grammar.to_string()),
        ("min_len", min_len.to_string()),
        ("max_len", max_len.to_string()),
        ("seed", seed.to_string()),
    ]);
    write_manifest(&out, &cfg_text, seed, started)?;
    println!(
        "wrote {}: {} train ({} corrupted) / {} valid / {} test-sup / {} test-zero pairs",
        out.display(),
        set.train.examples.len(),
        set.noise_log.len(),
        set.valid.examples.len(),
        set.test_sup.examples.len(),
        set.test_zero.examples.len(),
    );
    Ok(())
}

// ---- train ----

pub fn train(a: TrainArgs) -> Result<()> {
    let started = Instant::now();
    let r = Resolver::load(a.config.as_deref())?;
    let data: PathBuf = r.require(a.data, "data")?;
    let out: PathBuf = r.require(a.out, "out")?;
    let seed = r.seed(a.seed)?;
    let set = CorpusSet::load(&data)?;
    let (name, opts) = resolve_strategy(&r, &a.strategy, "LCS")?;
    let mcfg = resolve_model(&r, &a.model, set.vocab.vocab_size())?;
    let tcfg = resolve_train(&r, &a.train, seed)?;
    let spec = StrategySpec::build(name, mcfg.enc_layers, opts)?;
    let init_from: Option<PathBuf> = r.opt(a.init_from, "init_from")?;

    fs::create_dir_all(&out)?;
    let (ckpt, metrics) = match &init_from {
        Some(p) => {
            let base = Checkpoint::load(p)?;
            lcs_core::train::finetune(&base, &spec, &set.train, &tcfg)?
        }
        None => lcs_core::train::train(&set.train, &set.vocab, &spec, &mcfg, &tcfg)?,
    };
    let ckpt_path = out.join("ckpt.bin");
    ckpt.save(&ckpt_path)?;
    write_steps_csv(&out.join("steps.csv"), &metrics)?;
    let cfg_text = effective_config(&[
        ("data", data.display().to_string()),
        ("strategy", name.as_str().to_string()),
        ("k", spec.converter_k.to_string()),
        ("init_from", init_from.map(|p| p.display().to_string()).unwrap_or_default()),
        ("enc_layers", mcfg.enc_layers.to_string()),
        ("dec_layers", mcfg.dec_layers.to_string()),
        ("d_model", mcfg.d_model.to_string()),
        ("heads", mcfg.n_heads.to_string()),
        ("ff", mcfg.d_ff.to_string()),
        ("max_len", mcfg.max_len.to_string()),
        ("dropout", mcfg.dropout.to_string()),
        ("steps", tcfg.max_steps.to_string()),
        ("batch_tokens", tcfg.batch_tokens.to_string()),
        ("lr", tcfg.lr_peak.to_string()),
        ("warmup", tcfg.warmup_steps.to_string()),
        ("smoothing", tcfg.label_smoothing.to_string()),
        ("ckpt_every", tcfg.checkpoint_every.to_string()),
        ("avg_last", tcfg.average_last.to_string()),
        ("seed", seed.to_string()),
    ]);
    write_manifest(&out, &cfg_text, seed, started)?;
    match metrics.last() {
        Some(m) => println!(
            "trained {} steps, final loss {:.4} → {}",
            m.step,
            m.loss,
            ckpt_path.display()
        ),
        None => println!("no training steps requested → {}", ckpt_path.display()),
    }
    Ok(())
}

// ---- translate ----

pub fn translate(a: TranslateArgs) -> Result<()> {
    let started = Instant::now();
    let r = Resolver::load(a.config.as_deref())?;
    let ckpt_path: PathBuf = r.require(a.ckpt, "ckpt")?;
    let direction: String = r.require(a.direction, "direction")?;
    let (src_lang, tgt_lang) = parse_direction(&direction)?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let (name, opts) = resolve_strategy(&r, &a.strategy, "LCS")?;
    let spec = StrategySpec::build(name, ckpt.cfg.enc_layers, opts)?;
    let dcfg = resolve_decode(&r, &a.decode)?;

    let input: Option<PathBuf> = r.opt(a.input, "input")?;
    let sentence: Option<String> = r.opt(a.sentence, "sentence")?;
    let lines: Vec<String> = match (&input, &sentence) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("pass either --input or --sentence, not both".into()))
        }
        (Some(p), None) => fs::read_to_string(p)?
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect(),
        (None, Some(s)) => vec![s.clone()],
        (None, None) => {
            return Err(Error::Config(
                "missing required --input (file of token-id lines) or --sentence".into(),
            ))
        }
    };
    if lines.is_empty() {
        return Err(Error::Config("no sentences to translate".into()));
    }
    let vocab_top = ckpt.cfg.vocab_size as u32;
    let mut sentences = Vec::with_capacity(lines.len());
    for line in &lines {
        let toks = line
            .split_whitespace()
            .map(|t| {
                t.parse::<u32>()
                    .map_err(|_| Error::Vocab(format!("`{t}` is not a token id")))
            })
            .collect::<Result<Vec<u32>>>()?;
        if let Some(&bad) = toks.iter().find(|&&t| t >= vocab_top) {
            return Err(Error::Vocab(format!(
                "token id {bad} outside the checkpoint vocabulary of {vocab_top}"
            )));
        }
        sentences.push(toks);
    }

    let mut outputs = Vec::with_capacity(sentences.len());
    let mut unfinished = 0usize;
    for toks in &sentences {
        let d = beam::translate(&ckpt, toks, &src_lang, &tgt_lang, &spec, &dcfg)?;
        if !d.finished {
            unfinished += 1;
        }
        outputs.push(d.tokens.iter().map(u32::to_string).collect::<Vec<_>>().join(" "));
    }
    for line in &outputs {
        println!("{line}");
    }
    if unfinished > 0 {
        eprintln!("warning: {unfinished} translation(s) hit the length cap before the end marker");
    }
    if let Some(out) = r.opt::<PathBuf>(a.out, "out")? {
        fs::create_dir_all(&out)?;
        fs::write(out.join("translations.txt"), outputs.join("\n") + "\n")?;
        let cfg_text = effective_config(&[
            ("ckpt", ckpt_path.display().to_string()),
            ("direction", direction.clone()),
            ("strategy", name.as_str().to_string()),
            ("beam", dcfg.beam_size.to_string()),
            ("length_penalty", dcfg.length_penalty.to_string()),
            ("max_decode_len", dcfg.max_decode_len.to_string()),
        ]);
        write_manifest(&out, &cfg_text, 0, started)?;
    }
    Ok(())
}

// ---- eval ----

pub fn eval(a: EvalArgs) -> Result<()> {
    let started = Instant::now();
    let r = Resolver::load(a.config.as_deref())?;
    let ckpt_path: PathBuf = r.require(a.ckpt, "ckpt")?;
    let data: PathBuf = r.require(a.data, "data")?;
    let out: PathBuf = r.require(a.out, "out")?;
    let split = r.get_or(a.split, "split", "test-zero".to_string())?;
    let set = CorpusSet::load(&data)?;
    let corpus: &ParallelCorpus = match split.as_str() {
        "train" => &set.train,
        "valid" => &set.valid,
        "test-sup" | "test_sup" => &set.test_sup,
        "test-zero" | "test_zero" => &set.test_zero,
        other => {
            return Err(Error::Config(format!(
                "unknown split `{other}`; expected train, valid, test-sup, or test-zero"
            )))
        }
    };
    let default_per = if corpus as *const _ == &set.test_zero as *const _ { 150 } else { 100 };
    let per_direction = r.get_or(a.per_direction, "per_direction", default_per)?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let (name, opts) = resolve_strategy(&r, &a.strategy, "LCS")?;
    let spec = StrategySpec::build(name, ckpt.cfg.enc_layers, opts)?;
    let dcfg = resolve_decode(&r, &a.decode)?;

    let report = evaluate(&ckpt, &spec, corpus, &dcfg, per_direction)?;
    fs::create_dir_all(&out)?;
    let mut quality = String::from("src,tgt,n,exact,bleu\n");
    for d in &report.directions {
        quality.push_str(&format!(
            "{},{},{},{},{}\n",
            d.src_lang, d.tgt_lang, d.n, d.exact, d.bleu
        ));
    }
    quality.push_str(&format!("*,*,{},{},{}\n", report.n, report.exact, report.bleu));
    fs::write(out.join("quality.csv"), quality)?;

    let mut rates = String::from("src,tgt,n,acc,to_src,to_en,to_other\n");
    for d in report.rates.per_direction.iter().chain([&report.rates.macro_avg]) {
        rates.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            d.src_lang, d.tgt_lang, d.n, d.acc, d.to_src, d.to_en, d.to_other
        ));
    }
    fs::write(out.join("rates.csv"), rates)?;

    let cfg_text = effective_config(&[
        ("ckpt", ckpt_path.display().to_string()),
        ("data", data.display().to_string()),
        ("split", split.clone()),
        ("per_direction", per_direction.to_string()),
        ("strategy", name.as_str().to_string()),
        ("beam", dcfg.beam_size.to_string()),
        ("length_penalty", dcfg.length_penalty.to_string()),
        ("max_decode_len", dcfg.max_decode_len.to_string()),
    ]);
    write_manifest(&out, &cfg_text, 0, started)?;
    println!(
        "{} sentences on {split}: exact {:.2}%  bleu {:.2}  acc {:.2}%",
        report.n, report.exact, report.bleu, report.rates.macro_avg.acc
    );
    Ok(())
}

// ---- analyze ----

struct CommonRun {
    set: CorpusSet,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    dcfg: DecodeConfig,
    limits: EvalLimits,
    seeds: Vec<u64>,
    out: PathBuf,
}

fn resolve_common(r: &Resolver, c: &RunCommon) -> Result<CommonRun> {
    let data: PathBuf = r.require(c.data.clone(), "data")?;
    let out: PathBuf = r.require(c.out.clone(), "out")?;
    let set = CorpusSet::load(&data)?;
    let seeds = resolve_seeds(r, c.seeds.clone())?;
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let mcfg = resolve_model(r, &c.model, set.vocab.vocab_size())?;
    let tcfg = resolve_train(r, &c.train, seeds[0])?;
    let dcfg = resolve_decode(r, &c.decode)?;
    let limits = EvalLimits {
        supervised_per_direction: r.get_or(c.sup_per_direction, "sup_per_direction", 100)?,
        zeroshot_per_direction: r.get_or(c.zs_per_direction, "zs_per_direction", 150)?,
    };
    Ok(CommonRun { set, mcfg, tcfg, dcfg, limits, seeds, out })
}

/// Converter strategies get the `k` override; others have no k to set.
fn with_k(name: StrategyName, k: Option<usize>) -> StrategyOptions {
    match name {
        StrategyName::Lcs | StrategyName::LcsVariant => StrategyOptions { k, ..Default::default() },
        _ => StrategyOptions::default(),
    }
}

pub fn analyze_compare(c: CompareArgs) -> Result<()> {
    let r = Resolver::load(c.common.config.as_deref())?;
    let run = resolve_common(&r, &c.common)?;
    let names = parse_strategies(&r.get_or(
        c.strategies,
        "strategies",
        "LCS,T-Enc,S-Enc-T-Dec".to_string(),
    )?)?;
    let k = r.opt(c.k, "k")?;
    let strategies: Vec<(StrategyName, StrategyOptions)> =
        names.into_iter().map(|n| (n, with_k(n, k))).collect();
    let report = run_strategy_comparison(
        &run.out, &run.set, &strategies, &run.seeds, &run.mcfg, &run.tcfg, &run.dcfg, &run.limits,
    )?;
    for s in &report.summary {
        println!(
            "{: <14} zero-shot acc {:6.2}% ± {:.2}  exact {:6.2}%  bleu {:6.2}  ({} ok / {} diverged)",
            s.strategy,
            s.zs_acc_mean,
            s.zs_acc_spread,
            s.zs_exact_mean,
            s.zs_bleu_mean,
            s.seeds_ok,
            s.seeds_diverged,
        );
    }
    println!("tables written to {}", run.out.display());
    Ok(())
}

pub fn analyze_noise(c: NoiseArgs) -> Result<()> {
    let r = Resolver::load(c.common.config.as_deref())?;
    let run = resolve_common(&r, &c.common)?;
    let flags = StrategyFlags { strategy: c.strategy, ..Default::default() };
    let (name, opts) = resolve_strategy(&r, &flags, "T-Enc")?;
    let report = run_noise_contrast(
        &run.out, &run.set, (name, opts), &run.seeds, &run.mcfg, &run.tcfg, &run.dcfg, &run.limits,
    )?;
    println!(
        "{}: trained on {} noisy vs {} denoised pairs",
        name.as_str(),
        report.noisy_train_size,
        report.denoised_train_size
    );
    for cell in &report.cells {
        println!(
            "seed {}: To-Src noisy {}  denoised {}",
            cell.seed,
            cell.noisy_to_src.map(|v| format!("{v:.2}%")).unwrap_or_else(|| "—".into()),
            cell.denoised_to_src.map(|v| format!("{v:.2}%")).unwrap_or_else(|| "—".into()),
        );
    }
    println!("tables written to {}", run.out.display());
    Ok(())
}

/// Load the parallel checkpoint/strategy/label lists for checkpoint-based
/// analyses.
fn load_runs(r: &Resolver, c: &CkptRuns) -> Result<(CorpusSet, Vec<(String, Checkpoint, StrategySpec)>, PathBuf)> {
    let data: PathBuf = r.require(c.data.clone(), "data")?;
    let out: PathBuf = r.require(c.out.clone(), "out")?;
    let paths: Vec<PathBuf> = parse_list(&r.require::<String>(c.ckpts.clone(), "ckpts")?, "checkpoint")?;
    let names = parse_strategies(&r.require::<String>(c.strategies.clone(), "strategies")?)?;
    if paths.len() != names.len() {
        return Err(Error::Config(format!(
            "{} checkpoints but {} strategies",
            paths.len(),
            names.len()
        )));
    }
    let labels: Vec<String> = match r.opt(c.labels.clone(), "labels")? {
        Some(s) => {
            let l: Vec<String> = parse_list(&s, "label")?;
            if l.len() != paths.len() {
                return Err(Error::Config(format!(
                    "{} labels for {} checkpoints",
                    l.len(),
                    paths.len()
                )));
            }
            l
        }
        // Default labels: strategy names, suffixed by position when repeated.
        None => names
            .iter()
            .enumerate()
            .map(|(i, n)| {
                if names.iter().filter(|m| *m == n).count() > 1 {
                    format!("{}_{i}", n.as_str())
                } else {
                    n.as_str().to_string()
                }
            })
            .collect(),
    };
    let k = r.opt(c.k, "k")?;
    let set = CorpusSet::load(&data)?;
    let mut runs = Vec::new();
    for ((path, name), label) in paths.iter().zip(&names).zip(&labels) {
        let ckpt = Checkpoint::load(path)?;
        let spec = StrategySpec::build(*name, ckpt.cfg.enc_layers, with_k(*name, k))?;
        runs.push((label.clone(), ckpt, spec));
    }
    Ok((set, runs, out))
}

pub fn analyze_intervals(c: IntervalsArgs) -> Result<()> {
    let r = Resolver::load(c.runs.config.as_deref())?;
    let (set, runs, out) = load_runs(&r, &c.runs)?;
    let window = r.get_or(c.window, "window", 5usize)?;
    let per_direction = r.get_or(c.per_direction, "per_direction", 150usize)?;
    let dcfg = resolve_decode(&r, &c.decode)?;
    let curves = run_interval_analysis(&out, &runs, &set.test_zero, &dcfg, window, per_direction)?;
    for (label, stats) in &curves {
        let accs: Vec<String> = stats.iter().map(|s| format!("{:.1}", s.acc)).collect();
        println!("{label}: acc by window [{}]", accs.join(", "));
    }
    println!("curves written to {}", out.display());
    Ok(())
}

pub fn analyze_layersim(c: LayersimArgs) -> Result<()> {
    let r = Resolver::load(c.runs.config.as_deref())?;
    let (set, runs, out) = load_runs(&r, &c.runs)?;
    let limit = r.get_or(c.pairs_limit, "pairs_limit", 100usize)?;
    let pairs = pairs_from_corpus(&set.test_zero, limit);
    let curves = run_layer_similarity(&out, &runs, &pairs)?;
    for (label, curve) in &curves {
        let sims: Vec<String> = curve.per_layer.iter().map(|(_, c)| format!("{c:.3}")).collect();
        println!("{label}: cosine by layer [{}]", sims.join(", "));
    }
    println!("curves written to {}", out.display());
    Ok(())
}

pub fn analyze_ksweep(c: KsweepArgs) -> Result<()> {
    let r = Resolver::load(c.common.config.as_deref())?;
    let run = resolve_common(&r, &c.common)?;
    let ks: Vec<usize> = parse_list(&r.get_or(c.ks, "ks", "0,1,2".to_string())?, "k")?;
    let rows = run_k_sweep(&run.out, &run.set, &ks, &run.mcfg, &run.tcfg, &run.dcfg, &run.limits)?;
    for row in &rows {
        println!(
            "k={}: zero-shot acc {}  exact {}  bleu {}",
            row.k,
            row.zs_acc.map(|v| format!("{v:.2}%")).unwrap_or_else(|| "—".into()),
            row.zs_exact.map(|v| format!("{v:.2}%")).unwrap_or_else(|| "—".into()),
            row.zs_bleu.map(|v| format!("{v:.2}")).unwrap_or_else(|| "—".into()),
        );
    }
    println!("table written to {}", run.out.display());
    Ok(())
}

pub fn analyze_export(c: ExportArgs) -> Result<()> {
    let started = Instant::now();
    let r = Resolver::load(c.config.as_deref())?;
    let ckpt_path: PathBuf = r.require(c.ckpt, "ckpt")?;
    let data: PathBuf = r.require(c.data, "data")?;
    let out: PathBuf = r.require(c.out, "out")?;
    let limit = r.get_or(c.pairs_limit, "pairs_limit", 100usize)?;
    let ckpt = Checkpoint::load(&ckpt_path)?;
    let (name, opts) = resolve_strategy(&r, &c.strategy, "LCS")?;
    let spec = StrategySpec::build(name, ckpt.cfg.enc_layers, opts)?;
    let set = CorpusSet::load(&data)?;
    let pairs = pairs_from_corpus(&set.test_zero, limit);
    fs::create_dir_all(&out)?;
    let rows = export_encoder_representations(&out.join("representations.csv"), &ckpt, &spec, &pairs)?;
    let cfg_text = effective_config(&[
        ("ckpt", ckpt_path.display().to_string()),
        ("data", data.display().to_string()),
        ("strategy", name.as_str().to_string()),
        ("pairs_limit", limit.to_string()),
    ]);
    write_manifest(&out, &cfg_text, 0, started)?;
    println!("{rows} rows → {}", out.join("representations.csv").display());
    Ok(())
}
