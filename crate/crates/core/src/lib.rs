//! Desk-scale multilingual translation lab: a from-scratch reverse-mode
//! autodiff tape, a post-norm transformer encoder-decoder, language-tag
//! placement strategies including a converter stage that shifts deep encoder
//! states toward the target language, synthetic cipher-language corpora with
//! exact language identification, and a seeded experiment harness for
//! off-target-translation analysis.

pub mod beam;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod kvconfig;
pub mod metrics;
pub mod model;
pub mod strategy;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use beam::{beam_search, greedy_decode, translate, DecodeConfig, Decoded};
pub use checkpoint::{average_params, Checkpoint};
pub use corpus::{
    build_corpus, denoise_filter, inject_noise, supervised_directions, zeroshot_directions,
    CorpusConfig, CorpusSet, Example, ParallelCorpus,
};
pub use error::{Error, Result};
pub use gradcheck::{finite_difference_check, LossAndGrads};
pub use harness::{
    evaluate, export_encoder_representations, run_interval_analysis, run_k_sweep,
    run_layer_similarity, run_noise_contrast, run_strategy_comparison, EvalLimits, EvalReport,
};
pub use metrics::{
    bleu, bleu_with, detect_language, exact_match, interval_rates, language_rates,
    layer_similarity, IntervalStat, LanguageRateReport, RateSummary, SentencePair,
    SimilarityCurve,
};
pub use model::{
    decode_step, encode, forward_loss, init_params, loss_and_grads, EncoderTrace, ModelConfig,
    ParamMap,
};
pub use strategy::{
    prepare_example, prepare_source, strip_tags, InjectionPlan, PreparedExample, StrategyName,
    StrategyOptions, StrategySpec, TagSide,
};
pub use tape::Tape;
pub use tensor::Tensor;
pub use train::{finetune, learning_rate, train, StepMetric, TrainConfig};
pub use vocab::{SyntheticLanguage, VocabSpec, BOS_ID, EOS_ID};
