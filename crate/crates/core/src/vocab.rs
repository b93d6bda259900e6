use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a language rearranges the shared concept order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrderTransform {
    Identity,
    Reverse,
    /// Left-rotate by the given offset.
    RotateBy(usize),
    /// Swap positions (0,1), (2,3), ...; an odd tail stays put.
    SwapAdjacentPairs,
}

impl OrderTransform {
    pub fn apply<T: Copy>(&self, xs: &[T]) -> Vec<T> {
        let n = xs.len();
        match self {
            OrderTransform::Identity => xs.to_vec(),
            OrderTransform::Reverse => xs.iter().rev().copied().collect(),
            OrderTransform::RotateBy(r) => {
                if n == 0 {
                    return Vec::new();
                }
                (0..n).map(|i| xs[(i + r) % n]).collect()
            }
            OrderTransform::SwapAdjacentPairs => {
                let mut out = xs.to_vec();
                let mut i = 0;
                while i + 1 < n {
                    out.swap(i, i + 1);
                    i += 2;
                }
                out
            }
        }
    }

    pub fn invert<T: Copy>(&self, xs: &[T]) -> Vec<T> {
        let n = xs.len();
        match self {
            OrderTransform::Identity => xs.to_vec(),
            OrderTransform::Reverse => xs.iter().rev().copied().collect(),
            OrderTransform::RotateBy(r) => {
                if n == 0 {
                    return Vec::new();
                }
                // inverse of left-rotation is right-rotation
                (0..n).map(|i| xs[(i + n - (r % n)) % n]).collect()
            }
            OrderTransform::SwapAdjacentPairs => OrderTransform::SwapAdjacentPairs.apply(xs),
        }
    }
}

/// A cipher language: a bijective concept→surface permutation inside a
/// dedicated token-id range, plus a word-order transform. Rendering is exactly
/// invertible, which makes language identification exact.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticLanguage {
    pub code: String,
    pub range_start: u32,
    /// permutation[concept] = surface offset within the range
    pub permutation: Vec<u32>,
    pub order: OrderTransform,
}

impl SyntheticLanguage {
    pub fn grammar_size(&self) -> u32 {
        self.permutation.len() as u32
    }

    pub fn range(&self) -> std::ops::Range<u32> {
        self.range_start..self.range_start + self.grammar_size()
    }

    pub fn contains(&self, token: u32) -> bool {
        self.range().contains(&token)
    }

    pub fn render(&self, concepts: &[u32]) -> Result<Vec<u32>> {
        let g = self.grammar_size();
        for &c in concepts {
            if c >= g {
                return Err(Error::Vocab(format!(
                    "concept {c} outside grammar of {g} for language {}",
                    self.code
                )));
            }
        }
        let substituted: Vec<u32> = concepts
            .iter()
            .map(|&c| self.range_start + self.permutation[c as usize])
            .collect();
        Ok(self.order.apply(&substituted))
    }

    pub fn unrender(&self, tokens: &[u32]) -> Result<Vec<u32>> {
        let g = self.grammar_size() as usize;
        let mut inverse = vec![0u32; g];
        for (concept, &offset) in self.permutation.iter().enumerate() {
            inverse[offset as usize] = concept as u32;
        }
        let reordered = self.order.invert(tokens);
        reordered
            .iter()
            .map(|&t| {
                if !self.contains(t) {
                    return Err(Error::Vocab(format!(
                        "token {t} outside range of language {}",
                        self.code
                    )));
                }
                Ok(inverse[(t - self.range_start) as usize])
            })
            .collect()
    }
}

/// Full vocabulary layout: BOS, EOS, one tag token per language, then one
/// disjoint surface range per language. Tags live in the shared vocabulary, so
/// checkpoints stay portable across tag strategies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VocabSpec {
    pub langs: Vec<SyntheticLanguage>,
    pub grammar_size: u32,
    pub bos: u32,
    pub eos: u32,
}

pub const BOS_ID: u32 = 0;
pub const EOS_ID: u32 = 1;

/// Language codes for an n-language setup: "en" plus doubled letters.
pub fn default_codes(n: usize) -> Result<Vec<String>> {
    if n < 2 || n > 26 {
        return Err(Error::Config(format!("language count {n} outside [2, 26]")));
    }
    let mut codes = vec!["en".to_string()];
    for i in 0..n - 1 {
        let c = (b'a' + i as u8) as char;
        codes.push(format!("{c}{c}"));
    }
    Ok(codes)
}

// Non-English languages cycle through distinct order transforms so that
// translation is never pure token substitution.
fn transform_for(index_among_non_en: usize) -> OrderTransform {
    match index_among_non_en % 4 {
        0 => OrderTransform::Reverse,
        1 => OrderTransform::RotateBy(2),
        2 => OrderTransform::SwapAdjacentPairs,
        _ => OrderTransform::Identity,
    }
}

impl VocabSpec {
    pub fn build(codes: &[String], grammar_size: u32, seed: u64) -> Result<VocabSpec> {
        if grammar_size == 0 {
            return Err(Error::Config("grammar size must be positive".into()));
        }
        if !codes.iter().any(|c| c == "en") {
            return Err(Error::Config("language set must include \"en\"".into()));
        }
        if codes.len() < 2 {
            return Err(Error::Config("need at least 2 languages".into()));
        }
        {
            let mut seen = std::collections::HashSet::new();
            for c in codes {
                if !seen.insert(c) {
                    return Err(Error::Config(format!("duplicate language code {c}")));
                }
            }
        }
        let n_langs = codes.len() as u32;
        let mut langs = Vec::with_capacity(codes.len());
        let mut non_en_index = 0usize;
        for (i, code) in codes.iter().enumerate() {
            let mut perm: Vec<u32> = (0..grammar_size).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x51ab_c0de ^ i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            perm.shuffle(&mut rng);
            let order = if code == "en" {
                OrderTransform::Identity
            } else {
                let t = transform_for(non_en_index);
                non_en_index += 1;
                t
            };
            langs.push(SyntheticLanguage {
                code: code.clone(),
                range_start: 2 + n_langs + i as u32 * grammar_size,
                permutation: perm,
                order,
            });
        }
        Ok(VocabSpec {
            langs,
            grammar_size,
            bos: BOS_ID,
            eos: EOS_ID,
        })
    }

    pub fn vocab_size(&self) -> usize {
        2 + self.langs.len() + self.langs.len() * self.grammar_size as usize
    }

    pub fn lang(&self, code: &str) -> Result<&SyntheticLanguage> {
        self.langs
            .iter()
            .find(|l| l.code == code)
            .ok_or_else(|| Error::Vocab(format!("unknown language {code}")))
    }

    /// The tag token id for a language (e.g. the id standing for "<aa>").
    pub fn tag_id(&self, code: &str) -> Result<u32> {
        let idx = self
            .langs
            .iter()
            .position(|l| l.code == code)
            .ok_or_else(|| Error::Vocab(format!("unknown language {code}")))?;
        Ok(2 + idx as u32)
    }

    pub fn is_tag(&self, token: u32) -> bool {
        (2..2 + self.langs.len() as u32).contains(&token)
    }

    pub fn is_special(&self, token: u32) -> bool {
        token == self.bos || token == self.eos || self.is_tag(token)
    }

    /// Which language's surface range covers this token, if any.
    pub fn lang_of_token(&self, token: u32) -> Option<&str> {
        self.langs
            .iter()
            .find(|l| l.contains(token))
            .map(|l| l.code.as_str())
    }

    pub fn codes(&self) -> Vec<String> {
        self.langs.iter().map(|l| l.code.clone()).collect()
    }
}
