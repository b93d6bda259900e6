//! lcs-mnmt: corpus generation, training, translation, evaluation, and
//! scripted analyses for the tag-strategy translation framework, as one
//! binary. Exit codes: 0 success, 1 user error, 2 internal error.

mod commands;
mod resolve;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "lcs-mnmt",
    version,
    about = "Multilingual translation experiments on synthetic cipher languages",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a parallel corpus of synthetic cipher languages
    GenData(GenDataArgs),
    /// Train a model under a tag strategy (optionally fine-tuning a checkpoint)
    Train(TrainArgs),
    /// Translate token sentences with a trained checkpoint
    Translate(TranslateArgs),
    /// Score a checkpoint on a corpus split
    Eval(EvalArgs),
    /// Scripted multi-run analyses producing CSV tables
    Analyze(AnalyzeArgs),
}

/// Shared model-size knobs; unset fields take desk-scale defaults.
#[derive(Args, Clone, Default)]
struct ModelFlags {
    #[arg(long, help = "Encoder layers [default: 2]")]
    enc_layers: Option<usize>,
    #[arg(long, help = "Decoder layers [default: 2]")]
    dec_layers: Option<usize>,
    #[arg(long, help = "Model width [default: 64]")]
    d_model: Option<usize>,
    #[arg(long, help = "Attention heads [default: 4]")]
    heads: Option<usize>,
    #[arg(long, help = "Feed-forward width [default: 128]")]
    ff: Option<usize>,
    #[arg(long, help = "Maximum sequence length [default: 64]")]
    max_len: Option<usize>,
    #[arg(long, help = "Dropout rate [default: 0]")]
    dropout: Option<f64>,
}

/// Shared optimizer knobs; unset fields take desk-scale defaults.
#[derive(Args, Clone, Default)]
struct TrainFlags {
    #[arg(long, help = "Training steps [default: 4000]")]
    steps: Option<usize>,
    #[arg(long, help = "Token budget per batch [default: 512]")]
    batch_tokens: Option<usize>,
    #[arg(long, help = "Peak learning rate [default: 0.001]")]
    lr: Option<f64>,
    #[arg(long, help = "Warmup steps [default: 400]")]
    warmup: Option<usize>,
    #[arg(long, help = "Label smoothing [default: 0.1]")]
    smoothing: Option<f64>,
    #[arg(long, help = "Snapshot interval in steps [default: 500]")]
    ckpt_every: Option<usize>,
    #[arg(long, help = "Snapshots averaged into the final checkpoint [default: 5]")]
    avg_last: Option<usize>,
}

/// Shared decoding knobs.
#[derive(Args, Clone, Default)]
struct DecodeFlags {
    #[arg(long, help = "Beam size [default: 5]")]
    beam: Option<usize>,
    #[arg(long, help = "Length penalty exponent [default: 1.0]")]
    length_penalty: Option<f64>,
    #[arg(long, help = "Maximum generated tokens [default: 32]")]
    max_decode_len: Option<usize>,
}

/// Strategy selection plus per-strategy overrides.
#[derive(Args, Clone, Default)]
struct StrategyFlags {
    #[arg(long, help = "Tag strategy name [default: LCS]")]
    strategy: Option<String>,
    #[arg(long, help = "Converter depth k (language-converter strategies only)")]
    k: Option<usize>,
    #[arg(long, help = "Shallow-stage tag: src, tgt, or none")]
    shallow_tag: Option<String>,
    #[arg(long, help = "Converter-stage tag: src, tgt, or none")]
    converter_tag: Option<String>,
    #[arg(long, help = "Decoder-side tag: src, tgt, or none")]
    decoder_tag: Option<String>,
    #[arg(long, help = "Inject the target-language embedding at converter layers (true/false)")]
    inject: Option<bool>,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, help = "Flat key = value config file; flags override it")]
    config: Option<PathBuf>,
    #[arg(long, help = "Number of languages incl. en [default: 4]")]
    langs: Option<usize>,
    #[arg(long, help = "Total training pairs across supervised directions [default: 8000]")]
    pairs: Option<usize>,
    #[arg(long, help = "Total validation pairs [default: 1200]")]
    valid_pairs: Option<usize>,
    #[arg(long, help = "Total test pairs per split [default: 3000]")]
    test_pairs: Option<usize>,
    #[arg(long, help = "Fraction of training pairs given a wrong-language target [default: 0]")]
    noise: Option<f64>,
    #[arg(long, help = "Concepts per language [default: 200]")]
    grammar: Option<u32>,
    #[arg(long, help = "Minimum sentence length [default: 5]")]
    min_len: Option<usize>,
    #[arg(long, help = "Maximum sentence length [default: 15]")]
    max_len: Option<usize>,
    #[arg(long, help = "Seed (falls back to LCS_MNMT_SEED, then 1)")]
    seed: Option<u64>,
    #[arg(long, help = "Output directory (required)")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, help = "Flat key = value config file; flags override it")]
    config: Option<PathBuf>,
    #[arg(long, help = "Corpus directory from gen-data (required)")]
    data: Option<PathBuf>,
    #[arg(long, help = "Fine-tune from this checkpoint instead of fresh parameters")]
    init_from: Option<PathBuf>,
    #[command(flatten)]
    strategy: StrategyFlags,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[arg(long, help = "Seed (falls back to LCS_MNMT_SEED, then 1)")]
    seed: Option<u64>,
    #[arg(long, help = "Output directory (required)")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long, help = "Flat key = value config file; flags override it")]
    config: Option<PathBuf>,
    #[arg(long, help = "Checkpoint file (required)")]
    ckpt: Option<PathBuf>,
    #[arg(long, help = "Translation direction, e.g. aa-bb (required)")]
    direction: Option<String>,
    #[arg(long, help = "File of sentences: space-separated token ids, one per line")]
    input: Option<PathBuf>,
    #[arg(long, help = "One sentence inline: space-separated token ids")]
    sentence: Option<String>,
    #[command(flatten)]
    strategy: StrategyFlags,
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long, help = "Optional output directory for translations.txt")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, help = "Flat key = value config file; flags override it")]
    config: Option<PathBuf>,
    #[arg(long, help = "Checkpoint file (required)")]
    ckpt: Option<PathBuf>,
    #[arg(long, help = "Corpus directory (required)")]
    data: Option<PathBuf>,
    #[arg(long, help = "Split: train, valid, test-sup, or test-zero [default: test-zero]")]
    split: Option<String>,
    #[arg(long, help = "Sentences per direction [default: 150 zero-shot, 100 otherwise]")]
    per_direction: Option<usize>,
    #[command(flatten)]
    strategy: StrategyFlags,
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long, help = "Output directory (required)")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(subcommand)]
    what: AnalyzeCmd,
}

#[derive(Subcommand)]
enum AnalyzeCmd {
    /// Train several strategies across seeds and tabulate quality + rates
    Compare(CompareArgs),
    /// Train one strategy on the noisy corpus and on its denoised subset
    Noise(NoiseArgs),
    /// Detection rates by decoding-position window for trained checkpoints
    Intervals(IntervalsArgs),
    /// Cross-language encoder-layer similarity curves for trained checkpoints
    Layersim(LayersimArgs),
    /// Train the converter strategy across k values
    Ksweep(KsweepArgs),
    /// Export mean-pooled per-layer encoder vectors to CSV
    Export(ExportArgs),
}

/// Everything a training-based analysis needs.
#[derive(Args)]
struct RunCommon {
    #[arg(long, help = "Flat key = value config file; flags override it")]
    config: Option<PathBuf>,
    #[arg(long, help = "Corpus directory (required)")]
    data: Option<PathBuf>,
    #[arg(long, help = "Comma-separated seeds [default: 1]")]
    seeds: Option<String>,
    #[command(flatten)]
    model: ModelFlags,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long, help = "Eval sentences per supervised direction [default: 100]")]
    sup_per_direction: Option<usize>,
    #[arg(long, help = "Eval sentences per zero-shot direction [default: 150]")]
    zs_per_direction: Option<usize>,
    #[arg(long, help = "Output directory (required)")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: RunCommon,
    #[arg(long, help = "Comma-separated strategy names [default: LCS,T-Enc,S-Enc-T-Dec]")]
    strategies: Option<String>,
    #[arg(long, help = "Converter depth override for converter strategies")]
    k: Option<usize>,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    common: RunCommon,
    #[arg(long, help = "Strategy to contrast [default: T-Enc]")]
    strategy: Option<String>,
}

/// Checkpoint-based analyses: parallel comma lists of checkpoints and the
/// strategies they were trained under.
#[derive(Args)]
struct CkptRuns {
    #[arg(long, help = "Flat key = value config file; flags override it")]
    config: Option<PathBuf>,
    #[arg(long, help = "Comma-separated checkpoint files (required)")]
    ckpts: Option<String>,
    #[arg(long, help = "Comma-separated strategy names, one per checkpoint (required)")]
    strategies: Option<String>,
    #[arg(long, help = "Comma-separated labels, one per checkpoint [default: strategy names]")]
    labels: Option<String>,
    #[arg(long, help = "Converter depth override for converter strategies")]
    k: Option<usize>,
    #[arg(long, help = "Corpus directory (required)")]
    data: Option<PathBuf>,
    #[arg(long, help = "Output directory (required)")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IntervalsArgs {
    #[command(flatten)]
    runs: CkptRuns,
    #[arg(long, help = "Content tokens per window [default: 5]")]
    window: Option<usize>,
    #[arg(long, help = "Sentences per zero-shot direction [default: 150]")]
    per_direction: Option<usize>,
    #[command(flatten)]
    decode: DecodeFlags,
}

#[derive(Args)]
struct LayersimArgs {
    #[command(flatten)]
    runs: CkptRuns,
    #[arg(long, help = "Zero-shot sentence pairs to pool [default: 100]")]
    pairs_limit: Option<usize>,
}

#[derive(Args)]
struct KsweepArgs {
    #[command(flatten)]
    common: RunCommon,
    #[arg(long, help = "Comma-separated k values [default: 0,1,2]")]
    ks: Option<String>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long, help = "Flat key = value config file; flags override it")]
    config: Option<PathBuf>,
    #[arg(long, help = "Checkpoint file (required)")]
    ckpt: Option<PathBuf>,
    #[command(flatten)]
    strategy: StrategyFlags,
    #[arg(long, help = "Corpus directory (required)")]
    data: Option<PathBuf>,
    #[arg(long, help = "Zero-shot sentence pairs to export [default: 100]")]
    pairs_limit: Option<usize>,
    #[arg(long, help = "Output directory (required)")]
    out: Option<PathBuf>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    let result = match cli.cmd {
        Cmd::GenData(a) => commands::gen_data(a),
        Cmd::Train(a) => commands::train(a),
        Cmd::Translate(a) => commands::translate(a),
        Cmd::Eval(a) => commands::eval(a),
        Cmd::Analyze(a) => match a.what {
            AnalyzeCmd::Compare(c) => commands::analyze_compare(c),
            AnalyzeCmd::Noise(c) => commands::analyze_noise(c),
            AnalyzeCmd::Intervals(c) => commands::analyze_intervals(c),
            AnalyzeCmd::Layersim(c) => commands::analyze_layersim(c),
            AnalyzeCmd::Ksweep(c) => commands::analyze_ksweep(c),
            AnalyzeCmd::Export(c) => commands::analyze_export(c),
        },
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(if e.is_user_error() { 1 } else { 2 });
    }
}
