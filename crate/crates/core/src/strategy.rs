use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::vocab::{VocabSpec, BOS_ID};

/// Which language a tag token refers to, relative to a translation direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TagSide {
    Source,
    Target,
}

/// The eight supported strategy families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyName {
    TEnc,
    SEncTDec,
    STEnc,
    STEncTDec,
    TEncTDec,
    TEncMask,
    Lcs,
    LcsVariant,
}

impl StrategyName {
    pub fn as_str(&self) -> &'static str {
        match self {
            StrategyName::TEnc => "T-Enc",
            StrategyName::SEncTDec => "S-Enc-T-Dec",
            StrategyName::STEnc => "ST-Enc",
            StrategyName::STEncTDec => "ST-Enc-T-Dec",
            StrategyName::TEncTDec => "T-Enc-T-Dec",
            StrategyName::TEncMask => "T-Enc-Mask",
            StrategyName::Lcs => "LCS",
            StrategyName::LcsVariant => "LCS-variant",
        }
    }

    pub fn parse(s: &str) -> Result<StrategyName> {
        let norm = s.to_ascii_lowercase();
        Ok(match norm.as_str() {
            "t-enc" | "tenc" => StrategyName::TEnc,
            "s-enc-t-dec" | "senctdec" => StrategyName::SEncTDec,
            "st-enc" | "stenc" => StrategyName::STEnc,
            "st-enc-t-dec" | "stenctdec" => StrategyName::STEncTDec,
            "t-enc-t-dec" | "tenctdec" => StrategyName::TEncTDec,
            "t-enc-mask" | "tencmask" => StrategyName::TEncMask,
            "lcs" => StrategyName::Lcs,
            "lcs-variant" | "lcsvariant" => StrategyName::LcsVariant,
            _ => {
                return Err(Error::Config(format!(
                    "unknown strategy {s}; expected one of T-Enc, S-Enc-T-Dec, ST-Enc, \
                     ST-Enc-T-Dec, T-Enc-T-Dec, T-Enc-Mask, LCS, LCS-variant"
                )))
            }
        })
    }

    pub fn all() -> [StrategyName; 8] {
        [
            StrategyName::TEnc,
            StrategyName::SEncTDec,
            StrategyName::STEnc,
            StrategyName::STEncTDec,
            StrategyName::TEncTDec,
            StrategyName::TEncMask,
            StrategyName::Lcs,
            StrategyName::LcsVariant,
        ]
    }
}

/// Optional knobs; unset fields take the strategy's defaults.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StrategyOptions {
    pub k: Option<usize>,
    /// Tag prepended to the encoder input during the shallow stage.
    pub shallow_tag: Option<Option<TagSide>>,
    /// Tag in effect during the converter stage.
    pub converter_tag: Option<Option<TagSide>>,
    pub decoder_tag: Option<Option<TagSide>>,
    pub inject: Option<bool>,
}

/// Fully resolved description of a tag strategy for a given encoder depth.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategySpec {
    pub name: StrategyName,
    pub enc_layers: usize,
    /// Tags prepended to the encoder input, in order.
    pub encoder_tags: Vec<TagSide>,
    pub decoder_tag: Option<TagSide>,
    pub converter_k: usize,
    pub shallow_stage_tag: Option<TagSide>,
    pub converter_stage_tag: Option<TagSide>,
    /// Layers where the tag position is excluded from attention.
    pub mask_schedule: BTreeSet<usize>,
    /// Layer at whose input the tag's initial embedding is added back.
    pub restore_layer: Option<usize>,
    pub inject_target_embedding: bool,
}

/// Default converter depth: 2 at depth 6, otherwise the nearest integer to
/// 15% of the depth, at least 1.
pub fn default_k(enc_layers: usize) -> usize {
    if enc_layers == 6 {
        2
    } else {
        ((0.15 * enc_layers as f64).round() as usize).max(1)
    }
}

/// Attention-mask schedule for the masked probe: hide the tag in all but the
/// last two layers, then add its initial embedding back at the next layer's
/// input. At depth 6: mask layers 0–3, restore at 4.
pub fn build_mask_schedule(enc_layers: usize) -> Result<(BTreeSet<usize>, usize)> {
    if enc_layers < 3 {
        return Err(Error::Config(format!(
            "tag masking needs at least 3 encoder layers, got {enc_layers}"
        )));
    }
    let masked: BTreeSet<usize> = (0..=enc_layers - 3).collect();
    Ok((masked, enc_layers - 2))
}

impl StrategySpec {
    pub fn build(name: StrategyName, enc_layers: usize, opts: StrategyOptions) -> Result<StrategySpec> {
        if enc_layers == 0 {
            return Err(Error::Config("encoder must have at least one layer".into()));
        }
        let mut spec = StrategySpec {
            name,
            enc_layers,
            encoder_tags: Vec::new(),
            decoder_tag: None,
            converter_k: 0,
            shallow_stage_tag: None,
            converter_stage_tag: None,
            mask_schedule: BTreeSet::new(),
            restore_layer: None,
            inject_target_embedding: false,
        };
        match name {
            StrategyName::TEnc => {
                spec.encoder_tags = vec![TagSide::Target];
            }
            StrategyName::SEncTDec => {
                spec.encoder_tags = vec![TagSide::Source];
                spec.decoder_tag = Some(TagSide::Target);
            }
            StrategyName::STEnc => {
                spec.encoder_tags = vec![TagSide::Source, TagSide::Target];
            }
            StrategyName::STEncTDec => {
                spec.encoder_tags = vec![TagSide::Source, TagSide::Target];
                spec.decoder_tag = Some(TagSide::Target);
            }
            StrategyName::TEncTDec => {
                spec.encoder_tags = vec![TagSide::Target];
                spec.decoder_tag = Some(TagSide::Target);
            }
            StrategyName::TEncMask => {
                spec.encoder_tags = vec![TagSide::Target];
                let (mask, restore) = build_mask_schedule(enc_layers)?;
                spec.mask_schedule = mask;
                spec.restore_layer = Some(restore);
            }
            StrategyName::Lcs | StrategyName::LcsVariant => {
                // defaults: source tag through both stages, target tag on the
                // decoder, target embedding injected in the top-k layers
                let shallow = opts.shallow_tag.unwrap_or(Some(TagSide::Source));
                let converter = opts.converter_tag.unwrap_or(Some(TagSide::Source));
                let decoder = opts.decoder_tag.unwrap_or(Some(TagSide::Target));
                if name == StrategyName::Lcs {
                    // plain LCS accepts only k overrides; the variant form
                    // exists for placement experiments
                    let defaults = StrategyOptions { k: opts.k, ..Default::default() };
                    if opts != defaults {
                        return Err(Error::Config(
                            "tag placement overrides require the LCS-variant strategy".into(),
                        ));
                    }
                }
                if shallow.is_none() && converter.is_some() {
                    return Err(Error::Config(
                        "a converter-stage tag without a shallow-stage tag has no token to act on".into(),
                    ));
                }
                let k = opts.k.unwrap_or_else(|| default_k(enc_layers));
                if k > enc_layers {
                    return Err(Error::Config(format!(
                        "converter depth {k} exceeds encoder depth {enc_layers}"
                    )));
                }
                spec.converter_k = k;
                spec.shallow_stage_tag = shallow;
                spec.converter_stage_tag = converter;
                spec.decoder_tag = decoder;
                spec.inject_target_embedding = opts.inject.unwrap_or(true);
                if let Some(tag) = shallow {
                    spec.encoder_tags = vec![tag];
                }
            }
        }
        if name != StrategyName::Lcs && name != StrategyName::LcsVariant {
            let ignored = StrategyOptions::default();
            if opts != ignored {
                return Err(Error::Config(format!(
                    "strategy {} takes no k/tag/inject options",
                    name.as_str()
                )));
            }
        }
        Ok(spec)
    }

    /// The k deepest encoder layers.
    pub fn converter_layers(&self) -> BTreeSet<usize> {
        (self.enc_layers - self.converter_k..self.enc_layers).collect()
    }

    pub fn is_lcs(&self) -> bool {
        matches!(self.name, StrategyName::Lcs | StrategyName::LcsVariant)
    }
}

/// Everything `encode` needs to realize a strategy inside the encoder stack.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct InjectionPlan {
    /// Token whose embedding is added to every converter-layer input state.
    pub injected_embedding_id: Option<u32>,
    pub converter_layers: BTreeSet<usize>,
    /// Layers where the tag position is excluded from attention (key & query).
    pub mask_schedule: BTreeSet<usize>,
    pub mask_position: usize,
    /// (layer, position, tag id): add the tag's initial embedding back at this
    /// layer's input.
    pub restore: Option<(usize, usize, u32)>,
    /// (layer, position, tag id): overwrite the state at `position` with the
    /// tag's initial embedding at this layer's input (converter-boundary swap).
    pub replace_at: Option<(usize, usize, u32)>,
}

impl InjectionPlan {
    pub fn empty() -> InjectionPlan {
        InjectionPlan::default()
    }

    pub fn is_empty(&self) -> bool {
        self == &InjectionPlan::default()
    }
}

/// A training example with tags placed and the converter plan attached.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedExample {
    pub enc_input_ids: Vec<u32>,
    pub dec_input_ids: Vec<u32>,
    pub dec_target_ids: Vec<u32>,
    pub plan: InjectionPlan,
    pub src_lang: String,
    pub tgt_lang: String,
}

fn tag_for(side: TagSide, vocab: &VocabSpec, src_lang: &str, tgt_lang: &str) -> Result<u32> {
    match side {
        TagSide::Source => vocab.tag_id(src_lang),
        TagSide::Target => vocab.tag_id(tgt_lang),
    }
}

/// Encoder input and injection plan for one direction; shared by training
/// preparation and inference.
pub fn prepare_source(
    src_tokens: &[u32],
    src_lang: &str,
    tgt_lang: &str,
    spec: &StrategySpec,
    vocab: &VocabSpec,
) -> Result<(Vec<u32>, InjectionPlan)> {
    let mut enc = Vec::with_capacity(spec.encoder_tags.len() + src_tokens.len());
    for &side in &spec.encoder_tags {
        enc.push(tag_for(side, vocab, src_lang, tgt_lang)?);
    }
    enc.extend_from_slice(src_tokens);

    let mut plan = InjectionPlan::empty();
    let target_tag = vocab.tag_id(tgt_lang)?;
    if spec.is_lcs() {
        let conv = spec.converter_layers();
        if spec.inject_target_embedding && !conv.is_empty() {
            plan.injected_embedding_id = Some(target_tag);
            plan.converter_layers = conv.clone();
        }
        match (spec.shallow_stage_tag, spec.converter_stage_tag) {
            (Some(a), Some(b)) if a != b => {
                // swap the tag's state for the other tag's initial embedding
                // at the converter boundary
                if let Some(&first) = conv.iter().next() {
                    let id = tag_for(b, vocab, src_lang, tgt_lang)?;
                    plan.replace_at = Some((first, 0, id));
                }
            }
            (Some(_), None) => {
                // tag hidden from attention throughout the converter stage
                plan.mask_schedule = conv;
            }
            _ => {}
        }
    }
    plan.mask_schedule.extend(spec.mask_schedule.iter().copied());
    if let Some(layer) = spec.restore_layer {
        plan.restore = Some((layer, 0, target_tag));
    }
    Ok((enc, plan))
}

/// The decoder's first token: the designated tag, or plain BOS.
pub fn decoder_start(
    spec: &StrategySpec,
    vocab: &VocabSpec,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<u32> {
    match spec.decoder_tag {
        Some(side) => tag_for(side, vocab, src_lang, tgt_lang),
        None => Ok(BOS_ID),
    }
}

/// Place tags per the strategy and build decoder input/target sequences.
/// dec_target is dec_input shifted left with EOS appended.
pub fn prepare_example(
    src_tokens: &[u32],
    tgt_tokens: &[u32],
    src_lang: &str,
    tgt_lang: &str,
    spec: &StrategySpec,
    vocab: &VocabSpec,
) -> Result<PreparedExample> {
    let (enc_input_ids, plan) = prepare_source(src_tokens, src_lang, tgt_lang, spec, vocab)?;
    let start = decoder_start(spec, vocab, src_lang, tgt_lang)?;
    let mut dec_input_ids = Vec::with_capacity(tgt_tokens.len() + 1);
    dec_input_ids.push(start);
    dec_input_ids.extend_from_slice(tgt_tokens);
    let mut dec_target_ids = Vec::with_capacity(tgt_tokens.len() + 1);
    dec_target_ids.extend_from_slice(tgt_tokens);
    dec_target_ids.push(vocab.eos);
    Ok(PreparedExample {
        enc_input_ids,
        dec_input_ids,
        dec_target_ids,
        plan,
        src_lang: src_lang.to_string(),
        tgt_lang: tgt_lang.to_string(),
    })
}

/// Drop the strategy's tag tokens from an encoder input, recovering the
/// original source tokens.
pub fn strip_tags(enc_input_ids: &[u32], spec: &StrategySpec) -> Vec<u32> {
    enc_input_ids[spec.encoder_tags.len()..].to_vec()
}

/// Shift every position of h by e_t (tensor-level mirror of the converter
/// step inside the encoder).
pub fn converter_inject(h: &Tensor, e_t: &Tensor) -> Result<Tensor> {
    let d = h.cols();
    if e_t.len() != d {
        return Err(Error::shape("converter-inject", format!("[{d}]"), format!("{:?}", e_t.shape())));
    }
    let mut out = h.data().to_vec();
    for row in out.chunks_mut(d) {
        for (x, &e) in row.iter_mut().zip(e_t.data()) {
            *x += e;
        }
    }
    Tensor::new(h.shape().to_vec(), out)
}
